//! On-disk JSON documents.
//!
//! Every document is a single JSON object carrying a `format` tag so readers
//! can fail fast on the wrong file kind.  Floats are written with 17
//! significant digits, which round-trips every f64 exactly; reading a file
//! back must reproduce the in-memory model bit for bit.

use std::fs;
use std::io::{self, Write as _};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::data::ContextSchema;
use crate::error::{Error, Result};
use crate::leaf::LeafFamily;
use crate::tree::{Node, Tree};

pub const TREE_FORMAT: &str = "mst-v1";
pub const KMEANS_FORMAT: &str = "mstkm-v1";
pub const TRUTH_FORMAT: &str = "mst-truth-v1";

/// Compact JSON formatter that writes floats as `{:.16e}`: one leading digit
/// plus 16 fractional digits is exactly the 17 significant digits needed to
/// reconstruct any f64.
struct FullPrecision;

impl serde_json::ser::Formatter for FullPrecision {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W>(&mut self, writer: &mut W, value: f32) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        write!(writer, "{:.16e}", value as f64)
    }
}

/// Serializes any value with full float precision.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FullPrecision);
    value
        .serialize(&mut ser)
        .map_err(|e| Error::Decode(format!("serialization failed: {e}")))?;
    String::from_utf8(buf).map_err(|e| Error::Decode(format!("non-utf8 output: {e}")))
}

pub fn from_json_str<T: DeserializeOwned>(json: &str) -> Result<T> {
    serde_json::from_str(json).map_err(|e| Error::Decode(e.to_string()))
}

#[derive(Deserialize)]
struct TagProbe {
    format: Option<String>,
}

/// Checks the document's `format` tag before full decoding so mismatched
/// files produce a pointed error rather than a field-level one.
pub fn check_format_tag(json: &str, expected: &str) -> Result<()> {
    let probe: TagProbe = serde_json::from_str(json)
        .map_err(|e| Error::Decode(format!("not a valid JSON document: {e}")))?;
    match probe.format {
        Some(tag) if tag == expected => Ok(()),
        Some(tag) => Err(Error::Decode(format!(
            "format tag {tag:?} does not match expected {expected:?}"
        ))),
        None => Err(Error::Decode(format!(
            "document has no format tag; expected {expected:?}"
        ))),
    }
}

/// Writes `contents` to `path` atomically: a temp file in the same directory
/// is flushed and then renamed over the target, so readers never observe a
/// half-written document.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let stem = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let tmp_name = format!(".{}.tmp{}", stem.to_string_lossy(), std::process::id());
    let tmp = match dir {
        Some(d) => d.join(&tmp_name),
        None => Path::new(&tmp_name).to_path_buf(),
    };
    let result = (|| -> Result<()> {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(contents.as_bytes())?;
        file.write_all(b"\n")?;
        file.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

#[derive(Serialize, Deserialize)]
struct TreeDocument {
    format: String,
    family: LeafFamily,
    schema: ContextSchema,
    root: usize,
    leaf_count: usize,
    depth: usize,
    nodes: Vec<Node>,
}

pub fn tree_to_string(tree: &Tree) -> Result<String> {
    let doc = TreeDocument {
        format: TREE_FORMAT.to_string(),
        family: tree.family,
        schema: tree.schema.clone(),
        root: tree.root,
        leaf_count: tree.leaf_count(),
        depth: tree.depth(),
        nodes: tree.nodes.clone(),
    };
    to_json_string(&doc)
}

pub fn tree_from_str(json: &str) -> Result<Tree> {
    check_format_tag(json, TREE_FORMAT)?;
    let doc: TreeDocument = from_json_str(json)?;
    // Derive bypasses the schema constructor, so re-run its checks.
    let schema = ContextSchema::new(doc.schema.variables)
        .map_err(|e| Error::Decode(format!("invalid schema: {e}")))?;
    let tree = Tree::from_nodes(schema, doc.family, doc.nodes, doc.root)?;
    if tree.leaf_count() != doc.leaf_count {
        return Err(Error::Decode(format!(
            "declared leaf_count {} but tree has {}",
            doc.leaf_count,
            tree.leaf_count()
        )));
    }
    if tree.depth() != doc.depth {
        return Err(Error::Decode(format!(
            "declared depth {} but tree has {}",
            doc.depth,
            tree.depth()
        )));
    }
    Ok(tree)
}

pub fn write_tree(path: &Path, tree: &Tree) -> Result<()> {
    write_atomic(path, &tree_to_string(tree)?)
}

pub fn read_tree(path: &Path) -> Result<Tree> {
    tree_from_str(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ContextSchema, Variable};
    use crate::leaf::{LeafModel, MnlShared};
    use crate::tree::Split;

    fn sample_tree() -> Tree {
        let schema = ContextSchema::new(vec![
            Variable::numeric("age"),
            Variable::categorical("region", vec!["us".into(), "eu".into()]),
        ])
        .unwrap();
        let mnl = |b: Vec<f64>| LeafModel::Mnl(MnlShared { beta: b });
        let nodes = vec![
            Node::Internal {
                split: Split::numeric(0, 0.1 + 0.2),
                left: 1,
                right: 2,
                model: mnl(vec![1.0 / 3.0, -2.5e17]),
                train_loss: 123.456789012345678,
                train_rows: 100,
            },
            Node::Leaf {
                leaf_id: 0,
                model: mnl(vec![f64::MIN_POSITIVE, 1e-300]),
                train_loss: 0.1,
                train_rows: 60,
            },
            Node::Leaf {
                leaf_id: 1,
                model: mnl(vec![f64::MAX, -0.0]),
                train_loss: 0.2,
                train_rows: 40,
            },
        ];
        Tree::from_nodes(schema, LeafFamily::Mnl, nodes, 0).unwrap()
    }

    #[test]
    fn tree_round_trips_bit_exact() {
        let tree = sample_tree();
        let json = tree_to_string(&tree).unwrap();
        let back = tree_from_str(&json).unwrap();
        assert_eq!(tree, back);
        // Serializing again yields identical bytes.
        assert_eq!(json, tree_to_string(&back).unwrap());
    }

    #[test]
    fn floats_keep_seventeen_significant_digits() {
        // Values chosen to expose loss at lower precision.
        for &x in &[0.1, 1.0 / 3.0, 1e-300, -2.5e17, f64::MIN_POSITIVE, f64::MAX, -0.0] {
            let json = to_json_string(&x).unwrap();
            let back: f64 = from_json_str(&json).unwrap();
            assert_eq!(x.to_bits(), back.to_bits(), "{x} -> {json} -> {back}");
        }
    }

    #[test]
    fn wrong_tag_is_rejected() {
        let tree = sample_tree();
        let json = tree_to_string(&tree).unwrap().replace("mst-v1", "mst-v9");
        let err = tree_from_str(&json).unwrap_err();
        assert!(err.to_string().contains("mst-v1"), "{err}");
        assert!(matches!(tree_from_str("{}"), Err(Error::Decode(_))));
    }

    #[test]
    fn truncated_document_is_rejected() {
        let json = tree_to_string(&sample_tree()).unwrap();
        let cut = &json[..json.len() / 2];
        assert!(matches!(tree_from_str(cut), Err(Error::Decode(_))));
    }

    #[test]
    fn inconsistent_summary_fields_are_rejected() {
        let json = tree_to_string(&sample_tree()).unwrap();
        let bad = json.replace("\"leaf_count\":2", "\"leaf_count\":3");
        assert_ne!(json, bad);
        assert!(tree_from_str(&bad).is_err());
        let bad = json.replace("\"depth\":1", "\"depth\":4");
        assert_ne!(json, bad);
        assert!(tree_from_str(&bad).is_err());
    }

    #[test]
    fn atomic_write_then_read() {
        let dir = std::env::temp_dir().join(format!("mst-format-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.json");
        let tree = sample_tree();
        write_tree(&path, &tree).unwrap();
        let back = read_tree(&path).unwrap();
        assert_eq!(tree, back);
        // No stray temp files remain.
        let leftovers: Vec<_> = std::fs::read_dir(&dir)
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name().to_string_lossy().contains(".tmp"))
            .collect();
        assert!(leftovers.is_empty());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
