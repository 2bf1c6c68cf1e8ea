//! Context schema and in-memory dataset layout shared by the trainer,
//! benchmarks, generators and metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sentinel code for a categorical value not present in the schema.  It never
/// compares equal to a split's category, so lenient routing sends it right.
pub const UNKNOWN_CATEGORY: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
    /// Category names in code order; empty for numeric variables.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
}

impl Variable {
    pub fn numeric(name: impl Into<String>) -> Self {
        Variable { name: name.into(), kind: VarKind::Numeric, categories: Vec::new() }
    }

    pub fn categorical(name: impl Into<String>, categories: Vec<String>) -> Self {
        Variable { name: name.into(), kind: VarKind::Categorical, categories }
    }
}

/// Ordered context variables; categorical values are stored as codes into the
/// variable's category list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextSchema {
    pub variables: Vec<Variable>,
}

impl ContextSchema {
    pub fn new(variables: Vec<Variable>) -> Result<Self> {
        let mut names: Vec<&str> = variables.iter().map(|v| v.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != variables.len() {
            return Err(Error::SchemaMismatch("duplicate variable names".into()));
        }
        for v in &variables {
            if v.kind == VarKind::Categorical {
                let mut cats = v.categories.clone();
                cats.sort_unstable();
                cats.dedup();
                if cats.len() != v.categories.len() {
                    return Err(Error::SchemaMismatch(format!(
                        "variable {:?} has duplicate categories",
                        v.name
                    )));
                }
            } else if !v.categories.is_empty() {
                return Err(Error::SchemaMismatch(format!(
                    "numeric variable {:?} lists categories",
                    v.name
                )));
            }
        }
        Ok(ContextSchema { variables })
    }

    pub fn len(&self) -> usize {
        self.variables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variables.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.name == name)
    }

    /// Checks that a context vector has the right arity and value kinds.
    pub fn check_context(&self, ctx: &[ContextValue]) -> Result<()> {
        if ctx.len() != self.variables.len() {
            return Err(Error::DimensionMismatch(format!(
                "context has {} values, schema has {} variables",
                ctx.len(),
                self.variables.len()
            )));
        }
        for (value, var) in ctx.iter().zip(&self.variables) {
            match (value, &var.kind) {
                (ContextValue::Num(x), VarKind::Numeric) => {
                    if !x.is_finite() {
                        return Err(Error::SchemaMismatch(format!(
                            "non-finite value for variable {:?}",
                            var.name
                        )));
                    }
                }
                (ContextValue::Cat(code), VarKind::Categorical) => {
                    if *code != UNKNOWN_CATEGORY && *code as usize >= var.categories.len() {
                        return Err(Error::UnknownCategory {
                            variable: var.name.clone(),
                            value: format!("code {code}"),
                        });
                    }
                }
                _ => {
                    return Err(Error::SchemaMismatch(format!(
                        "value kind does not match variable {:?}",
                        var.name
                    )))
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ContextValue {
    Num(f64),
    Cat(u32),
}

impl ContextValue {
    pub fn as_num(&self) -> Option<f64> {
        match self {
            ContextValue::Num(x) => Some(*x),
            ContextValue::Cat(_) => None,
        }
    }

    pub fn as_cat(&self) -> Option<u32> {
        match self {
            ContextValue::Cat(c) => Some(*c),
            ContextValue::Num(_) => None,
        }
    }
}

/// What was offered to the user: an assortment of priced options (choice data)
/// or a single bid (auction data).
#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    /// One feature vector per offered option, position-ordered; all vectors in
    /// a dataset share one length.
    Assortment(Vec<Vec<f64>>),
    Bid(f64),
}

/// Observed outcome.  `Choice(0)` is the no-purchase outcome; `Choice(h)` with
/// `h >= 1` picks the h-th offered option.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Response {
    Choice(u32),
    Win(bool),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayloadKind {
    Choice,
    Auction,
}

impl std::fmt::Display for PayloadKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PayloadKind::Choice => write!(f, "choice"),
            PayloadKind::Auction => write!(f, "auction"),
        }
    }
}

/// One observation, borrowed from a [`Dataset`].
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub context: &'a [ContextValue],
    pub decision: &'a Decision,
    pub response: Response,
}

/// Column-oriented dataset: contexts are stored flattened row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: ContextSchema,
    pub kind: PayloadKind,
    /// Option feature dimension for choice data, 0 for auction data.
    pub option_dim: usize,
    contexts: Vec<ContextValue>,
    decisions: Vec<Decision>,
    responses: Vec<Response>,
    max_options: usize,
    /// Generator-emitted latent segment per row, when known.
    pub latent: Option<Vec<u32>>,
}

impl Dataset {
    pub fn new(schema: ContextSchema, kind: PayloadKind, option_dim: usize) -> Self {
        Dataset {
            schema,
            kind,
            option_dim,
            contexts: Vec::new(),
            decisions: Vec::new(),
            responses: Vec::new(),
            max_options: 0,
            latent: None,
        }
    }

    pub fn push(&mut self, context: Vec<ContextValue>, decision: Decision, response: Response) -> Result<()> {
        self.schema.check_context(&context)?;
        match (&decision, &response, self.kind) {
            (Decision::Assortment(options), Response::Choice(y), PayloadKind::Choice) => {
                if options.is_empty() {
                    return Err(Error::EmptyInput("assortment with no options"));
                }
                for o in options {
                    if o.len() != self.option_dim {
                        return Err(Error::DimensionMismatch(format!(
                            "option has {} features, dataset expects {}",
                            o.len(),
                            self.option_dim
                        )));
                    }
                }
                if *y as usize > options.len() {
                    return Err(Error::InvalidArgument(format!(
                        "chosen index {} exceeds assortment size {}",
                        y,
                        options.len()
                    )));
                }
            }
            (Decision::Bid(b), Response::Win(_), PayloadKind::Auction) => {
                if !b.is_finite() {
                    return Err(Error::InvalidArgument("non-finite bid".into()));
                }
            }
            _ => {
                return Err(Error::FamilyMismatch {
                    family: "row".into(),
                    payload: format!("{}", self.kind),
                })
            }
        }
        if let Decision::Assortment(options) = &decision {
            self.max_options = self.max_options.max(options.len());
        }
        self.contexts.extend_from_slice(&context);
        self.decisions.push(decision);
        self.responses.push(response);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.decisions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.decisions.is_empty()
    }

    /// Largest assortment size seen so far; 0 for auction data.
    pub fn max_options(&self) -> usize {
        self.max_options
    }

    #[inline]
    pub fn context(&self, row: usize) -> &[ContextValue] {
        let m = self.schema.len();
        &self.contexts[row * m..(row + 1) * m]
    }

    #[inline]
    pub fn decision(&self, row: usize) -> &Decision {
        &self.decisions[row]
    }

    #[inline]
    pub fn response(&self, row: usize) -> Response {
        self.responses[row]
    }

    #[inline]
    pub fn observation(&self, row: usize) -> Observation<'_> {
        Observation {
            context: self.context(row),
            decision: self.decision(row),
            response: self.response(row),
        }
    }

    pub fn rows(&self) -> impl Iterator<Item = Observation<'_>> {
        (0..self.len()).map(move |i| self.observation(i))
    }

    /// Largest assortment size, 0 for an empty or auction dataset.
    pub fn max_assortment(&self) -> usize {
        self.max_options
    }

    /// Concatenates another dataset with an identical schema and kind.
    pub fn extend(&mut self, other: &Dataset) -> Result<()> {
        if other.schema != self.schema || other.kind != self.kind || other.option_dim != self.option_dim {
            return Err(Error::SchemaMismatch("cannot concatenate datasets with different layouts".into()));
        }
        self.contexts.extend_from_slice(&other.contexts);
        self.decisions.extend_from_slice(&other.decisions);
        self.responses.extend_from_slice(&other.responses);
        self.max_options = self.max_options.max(other.max_options);
        self.latent = match (self.latent.take(), &other.latent) {
            (Some(mut a), Some(b)) => {
                a.extend_from_slice(b);
                Some(a)
            }
            _ => None,
        };
        Ok(())
    }

    /// Copies a row range into a standalone dataset, latent labels included.
    /// This is how one generated dataset becomes train/validation/test splits
    /// that share a single ground truth.
    pub fn subset(&self, range: std::ops::Range<usize>) -> Dataset {
        let m = self.schema.len();
        Dataset {
            schema: self.schema.clone(),
            kind: self.kind,
            option_dim: self.option_dim,
            contexts: self.contexts[range.start * m..range.end * m].to_vec(),
            decisions: self.decisions[range.clone()].to_vec(),
            responses: self.responses[range.clone()].to_vec(),
            max_options: self.decisions[range.clone()]
                .iter()
                .map(|d| match d {
                    Decision::Assortment(options) => options.len(),
                    Decision::Bid(_) => 0,
                })
                .max()
                .unwrap_or(0),
            latent: self.latent.as_ref().map(|l| l[range].to_vec()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_var_schema() -> ContextSchema {
        ContextSchema::new(vec![
            Variable::numeric("age"),
            Variable::categorical("site", vec!["us".into(), "eu".into()]),
        ])
        .unwrap()
    }

    #[test]
    fn duplicate_names_rejected() {
        let err = ContextSchema::new(vec![Variable::numeric("a"), Variable::numeric("a")]);
        assert!(err.is_err());
    }

    #[test]
    fn duplicate_categories_rejected() {
        let err = ContextSchema::new(vec![Variable::categorical(
            "c",
            vec!["x".into(), "x".into()],
        )]);
        assert!(err.is_err());
    }

    #[test]
    fn context_kind_checked() {
        let schema = two_var_schema();
        assert!(schema
            .check_context(&[ContextValue::Num(30.0), ContextValue::Cat(1)])
            .is_ok());
        assert!(schema
            .check_context(&[ContextValue::Cat(0), ContextValue::Cat(1)])
            .is_err());
        assert!(schema
            .check_context(&[ContextValue::Num(30.0), ContextValue::Cat(2)])
            .is_err());
        assert!(schema
            .check_context(&[ContextValue::Num(30.0), ContextValue::Cat(UNKNOWN_CATEGORY)])
            .is_ok());
    }

    #[test]
    fn push_validates_rows() {
        let mut data = Dataset::new(two_var_schema(), PayloadKind::Choice, 2);
        data.push(
            vec![ContextValue::Num(30.0), ContextValue::Cat(0)],
            Decision::Assortment(vec![vec![1.0, 0.5]]),
            Response::Choice(1),
        )
        .unwrap();
        // chosen index beyond the assortment
        assert!(data
            .push(
                vec![ContextValue::Num(30.0), ContextValue::Cat(0)],
                Decision::Assortment(vec![vec![1.0, 0.5]]),
                Response::Choice(2),
            )
            .is_err());
        // auction row in a choice dataset
        assert!(data
            .push(
                vec![ContextValue::Num(30.0), ContextValue::Cat(0)],
                Decision::Bid(1.0),
                Response::Win(true),
            )
            .is_err());
        assert_eq!(data.len(), 1);
        assert_eq!(data.context(0).len(), 2);
    }
}
