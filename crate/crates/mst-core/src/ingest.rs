//! CSV ingestion and export.
//!
//! Two layouts share the context-column conventions `xnum_<name>` (numeric)
//! and `xcat_<name>` (categorical string), plus an optional `_latent`
//! integer column carrying generator segment labels:
//!
//! * choice-long: one line per (session, option) with `session_id`,
//!   `option_id`, the context columns repeated identically across the
//!   session's lines, `opt_<feature>` option columns, and `chosen` in {0,1}.
//!   A session with no chosen line records a no-purchase.  Session lines
//!   must be contiguous.
//! * auction-flat: one line per auction with the context columns, `bid`,
//!   and `win` in {0,1}.
//!
//! Structural problems abort with the offending line number; ingestion
//! never repairs a malformed file.

use std::collections::HashSet;
use std::path::Path;

use crate::data::{
    ContextSchema, ContextValue, Dataset, Decision, PayloadKind, Response, VarKind, Variable,
    UNKNOWN_CATEGORY,
};
use crate::error::{Error, Result};
use crate::format::write_atomic;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterOp {
    Le,
    Lt,
    Ge,
    Gt,
}

/// Numeric range filter applied before rows are assembled, e.g. `price<=4000`
/// drops every option whose `opt_price` exceeds 4000.  The column name is
/// written bare; it matches a numeric context variable, an option feature,
/// or `bid`.
#[derive(Debug, Clone, PartialEq)]
pub struct Filter {
    pub column: String,
    pub op: FilterOp,
    pub value: f64,
}

impl Filter {
    pub fn keeps(&self, value: f64) -> bool {
        match self.op {
            FilterOp::Le => value <= self.value,
            FilterOp::Lt => value < self.value,
            FilterOp::Ge => value >= self.value,
            FilterOp::Gt => value > self.value,
        }
    }
}

impl std::str::FromStr for Filter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Filter> {
        // Two-character operators first so "<=" is not read as "<" plus "=4".
        for (text, op) in [
            ("<=", FilterOp::Le),
            (">=", FilterOp::Ge),
            ("<", FilterOp::Lt),
            (">", FilterOp::Gt),
        ] {
            if let Some(at) = s.find(text) {
                let column = s[..at].trim();
                let number = s[at + text.len()..].trim();
                if column.is_empty() {
                    return Err(Error::Config(format!("filter {s:?} names no column")));
                }
                let value: f64 = number
                    .parse()
                    .map_err(|_| Error::Config(format!("filter {s:?} has a non-numeric bound")))?;
                return Ok(Filter { column: column.into(), op, value });
            }
        }
        Err(Error::Config(format!(
            "filter {s:?} must look like \"column<=value\" (operators <=, <, >=, >)"
        )))
    }
}

const NUMERIC_PREFIX: &str = "xnum_";
const CATEGORICAL_PREFIX: &str = "xcat_";
const OPTION_PREFIX: &str = "opt_";
const LATENT_COLUMN: &str = "_latent";

struct Layout {
    /// (variable index in schema order) -> CSV column index.
    context_cols: Vec<usize>,
    variables: Vec<Variable>,
    option_cols: Vec<usize>,
    option_names: Vec<String>,
    session_col: Option<usize>,
    option_id_col: Option<usize>,
    chosen_col: Option<usize>,
    bid_col: Option<usize>,
    win_col: Option<usize>,
    latent_col: Option<usize>,
}

fn parse_header(headers: &csv::StringRecord) -> Result<Layout> {
    let mut layout = Layout {
        context_cols: Vec::new(),
        variables: Vec::new(),
        option_cols: Vec::new(),
        option_names: Vec::new(),
        session_col: None,
        option_id_col: None,
        chosen_col: None,
        bid_col: None,
        win_col: None,
        latent_col: None,
    };
    for (i, name) in headers.iter().enumerate() {
        if let Some(base) = name.strip_prefix(NUMERIC_PREFIX) {
            layout.context_cols.push(i);
            layout.variables.push(Variable::numeric(base));
        } else if let Some(base) = name.strip_prefix(CATEGORICAL_PREFIX) {
            layout.context_cols.push(i);
            layout.variables.push(Variable::categorical(base, Vec::new()));
        } else if let Some(base) = name.strip_prefix(OPTION_PREFIX) {
            layout.option_cols.push(i);
            layout.option_names.push(base.to_string());
        } else {
            let slot = match name {
                "session_id" => &mut layout.session_col,
                "option_id" => &mut layout.option_id_col,
                "chosen" => &mut layout.chosen_col,
                "bid" => &mut layout.bid_col,
                "win" => &mut layout.win_col,
                LATENT_COLUMN => &mut layout.latent_col,
                other => {
                    return Err(Error::Ingest {
                        line: 1,
                        message: format!("unknown column {other:?}"),
                    })
                }
            };
            if slot.is_some() {
                return Err(Error::Ingest { line: 1, message: format!("duplicate column {name:?}") });
            }
            *slot = Some(i);
        }
    }
    Ok(layout)
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

fn bad(record: &csv::StringRecord, message: impl Into<String>) -> Error {
    Error::Ingest { line: line_of(record), message: message.into() }
}

fn parse_num(record: &csv::StringRecord, col: usize, what: &str) -> Result<f64> {
    let raw = record.get(col).unwrap_or("");
    let value: f64 = raw
        .parse()
        .map_err(|_| bad(record, format!("{what} {raw:?} is not a number")))?;
    if !value.is_finite() {
        return Err(bad(record, format!("{what} {raw:?} is not finite")));
    }
    Ok(value)
}

fn parse_flag(record: &csv::StringRecord, col: usize, what: &str) -> Result<bool> {
    match record.get(col).unwrap_or("") {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(bad(record, format!("{what} must be 0 or 1, got {other:?}"))),
    }
}

/// Category codes either come from a fixed schema (unlisted values map to
/// the unknown sentinel) or grow in first-appearance order.
enum Categories<'a> {
    Fixed(&'a ContextSchema),
    Growing(Vec<Vec<String>>),
}

impl Categories<'_> {
    fn code(&mut self, var: usize, value: &str) -> u32 {
        match self {
            Categories::Fixed(schema) => schema.variables[var]
                .categories
                .iter()
                .position(|c| c == value)
                .map_or(UNKNOWN_CATEGORY, |p| p as u32),
            Categories::Growing(lists) => {
                let list = &mut lists[var];
                match list.iter().position(|c| c == value) {
                    Some(p) => p as u32,
                    None => {
                        list.push(value.to_string());
                        (list.len() - 1) as u32
                    }
                }
            }
        }
    }
}

fn parse_context(
    record: &csv::StringRecord,
    layout: &Layout,
    categories: &mut Categories<'_>,
) -> Result<Vec<ContextValue>> {
    let mut ctx = Vec::with_capacity(layout.variables.len());
    for (var, (&col, variable)) in layout.context_cols.iter().zip(&layout.variables).enumerate() {
        match variable.kind {
            VarKind::Numeric => {
                ctx.push(ContextValue::Num(parse_num(record, col, &variable.name)?));
            }
            VarKind::Categorical => {
                let raw = record.get(col).unwrap_or("");
                ctx.push(ContextValue::Cat(categories.code(var, raw)));
            }
        }
    }
    Ok(ctx)
}

/// True when the row passes every filter that targets a context column.
fn context_passes(ctx: &[ContextValue], variables: &[Variable], filters: &[Filter]) -> bool {
    filters.iter().all(|f| {
        match variables.iter().position(|v| v.name == f.column && v.kind == VarKind::Numeric) {
            Some(i) => f.keeps(ctx[i].as_num().expect("numeric variable")),
            None => true,
        }
    })
}

fn parse_latent(record: &csv::StringRecord, col: usize) -> Result<u32> {
    let raw = record.get(col).unwrap_or("");
    raw.parse::<u32>().map_err(|_| bad(record, format!("_latent {raw:?} is not an integer")))
}

fn build_schema(layout: &Layout, categories: Categories<'_>) -> Result<ContextSchema> {
    match categories {
        Categories::Fixed(schema) => Ok(schema.clone()),
        Categories::Growing(lists) => {
            let variables = layout
                .variables
                .iter()
                .zip(lists)
                .map(|(v, cats)| match v.kind {
                    VarKind::Numeric => v.clone(),
                    VarKind::Categorical => Variable::categorical(&v.name, cats),
                })
                .collect();
            ContextSchema::new(variables)
        }
    }
}

struct Session {
    id: String,
    first_line: u64,
    context: Vec<ContextValue>,
    latent: Option<u32>,
    options: Vec<Vec<f64>>,
    chosen: Option<usize>,
    dropped: bool,
}

fn open_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    Ok(csv::ReaderBuilder::new().has_headers(true).from_path(path).map_err(io_error)?)
}

fn io_error(e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => Error::Ingest { line: 0, message: e.to_string() },
        _ => Error::Ingest {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        },
    }
}

/// Reads a choice-long file; `schema` fixes variable order and category
/// codes (for scoring against an existing model), otherwise both are taken
/// from the file.
pub fn read_choice_csv(path: &Path, schema: Option<&ContextSchema>, filters: &[Filter]) -> Result<Dataset> {
    let mut reader = open_reader(path)?;
    let layout = parse_header(reader.headers().map_err(io_error)?)?;
    if layout.session_col.is_none() || layout.chosen_col.is_none() {
        return Err(Error::Ingest {
            line: 1,
            message: "choice files need session_id and chosen columns".into(),
        });
    }
    if layout.option_cols.is_empty() {
        return Err(Error::Ingest { line: 1, message: "choice files need opt_ columns".into() });
    }
    check_schema_compat(schema, &layout)?;
    let session_col = layout.session_col.unwrap();
    let chosen_col = layout.chosen_col.unwrap();
    let mut categories = match schema {
        Some(s) => Categories::Fixed(s),
        None => Categories::Growing(vec![Vec::new(); layout.variables.len()]),
    };

    let mut sessions: Vec<Session> = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    let mut current: Option<Session> = None;
    for record in reader.records() {
        let record = record.map_err(io_error)?;
        let id = record.get(session_col).unwrap_or("").to_string();
        let starts_new = current.as_ref().is_none_or(|s| s.id != id);
        if starts_new {
            if let Some(done) = current.take() {
                sessions.push(done);
            }
            if !seen.insert(id.clone()) {
                return Err(bad(&record, format!("session {id:?} is not contiguous")));
            }
            let context = parse_context(&record, &layout, &mut categories)?;
            let latent = layout.latent_col.map(|c| parse_latent(&record, c)).transpose()?;
            let dropped = !context_passes(&context, &layout.variables, filters);
            current = Some(Session {
                id,
                first_line: line_of(&record),
                context,
                latent,
                options: Vec::new(),
                chosen: None,
                dropped,
            });
        }
        let session = current.as_mut().expect("session in progress");
        if !session.dropped {
            let context = parse_context(&record, &layout, &mut categories)?;
            if context != session.context {
                return Err(bad(
                    &record,
                    format!("context differs from line {} of the same session", session.first_line),
                ));
            }
            let latent = layout.latent_col.map(|c| parse_latent(&record, c)).transpose()?;
            if latent != session.latent {
                return Err(bad(
                    &record,
                    format!("_latent differs from line {} of the same session", session.first_line),
                ));
            }
        }
        let mut features = Vec::with_capacity(layout.option_cols.len());
        for (&col, name) in layout.option_cols.iter().zip(&layout.option_names) {
            features.push(parse_num(&record, col, name)?);
        }
        let kept = filters.iter().all(|f| {
            match layout.option_names.iter().position(|n| *n == f.column) {
                Some(i) => f.keeps(features[i]),
                None => true,
            }
        });
        let chosen = parse_flag(&record, chosen_col, "chosen")?;
        if chosen && session.chosen.is_some() {
            return Err(bad(&record, "second chosen option in one session"));
        }
        if kept {
            session.options.push(features);
            if chosen {
                session.chosen = Some(session.options.len());
            }
        } else if chosen {
            // The realized choice fell to a filter; the whole observation goes.
            session.dropped = true;
        }
    }
    if let Some(done) = current.take() {
        sessions.push(done);
    }

    let schema = build_schema(&layout, categories)?;
    let mut data = Dataset::new(schema, PayloadKind::Choice, layout.option_cols.len());
    let mut latents = Vec::new();
    for s in sessions {
        if s.dropped || s.options.is_empty() {
            continue;
        }
        let y = s.chosen.unwrap_or(0) as u32;
        data.push(s.context, Decision::Assortment(s.options), Response::Choice(y))
            .map_err(|e| Error::Ingest { line: s.first_line, message: e.to_string() })?;
        if let Some(l) = s.latent {
            latents.push(l);
        }
    }
    if layout.latent_col.is_some() && latents.len() == data.len() {
        data.latent = Some(latents);
    }
    Ok(data)
}

/// Reads an auction-flat file; see [`read_choice_csv`] for the `schema`
/// parameter.
pub fn read_auction_csv(path: &Path, schema: Option<&ContextSchema>, filters: &[Filter]) -> Result<Dataset> {
    let mut reader = open_reader(path)?;
    let layout = parse_header(reader.headers().map_err(io_error)?)?;
    let (Some(bid_col), Some(win_col)) = (layout.bid_col, layout.win_col) else {
        return Err(Error::Ingest { line: 1, message: "auction files need bid and win columns".into() });
    };
    check_schema_compat(schema, &layout)?;
    let mut categories = match schema {
        Some(s) => Categories::Fixed(s),
        None => Categories::Growing(vec![Vec::new(); layout.variables.len()]),
    };
    let mut rows = Vec::new();
    let mut latents = Vec::new();
    for record in reader.records() {
        let record = record.map_err(io_error)?;
        let context = parse_context(&record, &layout, &mut categories)?;
        let bid = parse_num(&record, bid_col, "bid")?;
        let win = parse_flag(&record, win_col, "win")?;
        if !context_passes(&context, &layout.variables, filters) {
            continue;
        }
        if !filters.iter().all(|f| f.column != "bid" || f.keeps(bid)) {
            continue;
        }
        if let Some(col) = layout.latent_col {
            latents.push(parse_latent(&record, col)?);
        }
        rows.push((line_of(&record), context, bid, win));
    }
    let schema = build_schema(&layout, categories)?;
    let mut data = Dataset::new(schema, PayloadKind::Auction, 0);
    for (line, context, bid, win) in rows {
        data.push(context, Decision::Bid(bid), Response::Win(win))
            .map_err(|e| Error::Ingest { line, message: e.to_string() })?;
    }
    if layout.latent_col.is_some() {
        data.latent = Some(latents);
    }
    Ok(data)
}

fn check_schema_compat(schema: Option<&ContextSchema>, layout: &Layout) -> Result<()> {
    let Some(schema) = schema else { return Ok(()) };
    if schema.variables.len() != layout.variables.len()
        || schema
            .variables
            .iter()
            .zip(&layout.variables)
            .any(|(a, b)| a.name != b.name || a.kind != b.kind)
    {
        return Err(Error::SchemaMismatch(
            "file context columns do not match the expected schema".into(),
        ));
    }
    Ok(())
}

/// Reads either layout, telling them apart by the header: `bid`/`win`
/// columns mean auction-flat, `session_id`/`chosen` mean choice-long.
pub fn read_csv(path: &Path, schema: Option<&ContextSchema>, filters: &[Filter]) -> Result<Dataset> {
    let mut reader = open_reader(path)?;
    let layout = parse_header(reader.headers().map_err(io_error)?)?;
    drop(reader);
    match (layout.bid_col.is_some() && layout.win_col.is_some(), layout.session_col.is_some()) {
        (true, false) => read_auction_csv(path, schema, filters),
        (false, true) => read_choice_csv(path, schema, filters),
        _ => Err(Error::Ingest {
            line: 1,
            message: "header matches neither choice-long nor auction-flat".into(),
        }),
    }
}

fn push_context_fields(record: &mut Vec<String>, data: &Dataset, row: usize) {
    for (variable, value) in data.schema.variables.iter().zip(data.context(row)) {
        match (variable.kind, value) {
            (VarKind::Numeric, ContextValue::Num(x)) => record.push(format!("{x}")),
            (VarKind::Categorical, ContextValue::Cat(c)) => {
                let name = variable.categories.get(*c as usize).cloned().unwrap_or_default();
                record.push(name);
            }
            _ => record.push(String::new()),
        }
    }
}

/// Writes a dataset back out in its layout's CSV form (atomic).  Option
/// features take the canonical names `opt_f0..`; session and option ids are
/// synthesized from row order.
pub fn write_csv(path: &Path, data: &Dataset) -> Result<()> {
    let mut out = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = Vec::new();
    match data.kind {
        PayloadKind::Choice => {
            header.push("session_id".into());
            header.push("option_id".into());
        }
        PayloadKind::Auction => {}
    }
    for v in &data.schema.variables {
        let prefix = match v.kind {
            VarKind::Numeric => NUMERIC_PREFIX,
            VarKind::Categorical => CATEGORICAL_PREFIX,
        };
        header.push(format!("{prefix}{}", v.name));
    }
    match data.kind {
        PayloadKind::Choice => {
            for f in 0..data.option_dim {
                header.push(format!("{OPTION_PREFIX}f{f}"));
            }
            header.push("chosen".into());
        }
        PayloadKind::Auction => {
            header.push("bid".into());
            header.push("win".into());
        }
    }
    if data.latent.is_some() {
        header.push(LATENT_COLUMN.into());
    }
    out.write_record(&header).map_err(io_error)?;

    for row in 0..data.len() {
        let latent = data.latent.as_ref().map(|l| l[row].to_string());
        match (data.decision(row), data.response(row)) {
            (Decision::Assortment(options), Response::Choice(y)) => {
                for (i, option) in options.iter().enumerate() {
                    let mut record: Vec<String> = vec![format!("s{row}"), format!("o{}", i + 1)];
                    push_context_fields(&mut record, data, row);
                    for x in option {
                        record.push(format!("{x}"));
                    }
                    record.push(if y as usize == i + 1 { "1".into() } else { "0".into() });
                    if let Some(l) = &latent {
                        record.push(l.clone());
                    }
                    out.write_record(&record).map_err(io_error)?;
                }
            }
            (Decision::Bid(bid), Response::Win(win)) => {
                let mut record: Vec<String> = Vec::new();
                push_context_fields(&mut record, data, row);
                record.push(format!("{bid}"));
                record.push(if win { "1".into() } else { "0".into() });
                if let Some(l) = &latent {
                    record.push(l.clone());
                }
                out.write_record(&record).map_err(io_error)?;
            }
            _ => unreachable!("dataset mixes payload kinds"),
        }
    }
    let bytes = out.into_inner().map_err(|e| Error::Ingest { line: 0, message: e.to_string() })?;
    let text = String::from_utf8(bytes)
        .map_err(|e| Error::Ingest { line: 0, message: e.to_string() })?;
    write_atomic(path, text.trim_end_matches('\n'))
}
