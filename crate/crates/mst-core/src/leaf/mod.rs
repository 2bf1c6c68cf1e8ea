//! Leaf response models: multinomial logit over assortments (shared or
//! per-position coefficients), isotonic and logistic win-rate curves over
//! bids, and a constant rate.  Each family defines the training loss the tree
//! minimizes when it searches for splits: negative log-likelihood for the
//! logit families, squared error for the rest.

pub mod constant;
pub mod isotonic;
pub mod logistic;
pub mod mnl;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Decision, PayloadKind, Response};
use crate::error::{Error, Result};
use crate::optim::{FitConfig, FitReport};
use crate::rng::Stream;

pub use constant::ConstantModel;
pub use isotonic::IsotonicCurve;
pub use logistic::LogisticModel;
pub use mnl::{MnlOptionSpecific, MnlShared};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LeafFamily {
    Mnl,
    MnlOptionSpecific,
    Isotonic,
    Logistic,
    Constant,
}

impl LeafFamily {
    pub fn payload(&self) -> PayloadKind {
        match self {
            LeafFamily::Mnl | LeafFamily::MnlOptionSpecific => PayloadKind::Choice,
            _ => PayloadKind::Auction,
        }
    }

    /// Whether fits of this family run a gradient-based optimizer (and so can
    /// use warm starts).
    pub fn is_gradient_based(&self) -> bool {
        matches!(self, LeafFamily::Mnl | LeafFamily::MnlOptionSpecific | LeafFamily::Logistic)
    }
}

impl std::str::FromStr for LeafFamily {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "mnl" => Ok(LeafFamily::Mnl),
            "mnl-option-specific" => Ok(LeafFamily::MnlOptionSpecific),
            "isotonic" => Ok(LeafFamily::Isotonic),
            "logistic" => Ok(LeafFamily::Logistic),
            "constant" => Ok(LeafFamily::Constant),
            other => Err(format!(
                "unknown leaf family {other:?} (expected mnl|mnl-option-specific|isotonic|logistic|constant)"
            )),
        }
    }
}

impl std::fmt::Display for LeafFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LeafFamily::Mnl => write!(f, "mnl"),
            LeafFamily::MnlOptionSpecific => write!(f, "mnl-option-specific"),
            LeafFamily::Isotonic => write!(f, "isotonic"),
            LeafFamily::Logistic => write!(f, "logistic"),
            LeafFamily::Constant => write!(f, "constant"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum LeafModel {
    Mnl(MnlShared),
    MnlOptionSpecific(MnlOptionSpecific),
    Isotonic(IsotonicCurve),
    Logistic(LogisticModel),
    Constant(ConstantModel),
}

impl LeafModel {
    pub fn family(&self) -> LeafFamily {
        match self {
            LeafModel::Mnl(_) => LeafFamily::Mnl,
            LeafModel::MnlOptionSpecific(_) => LeafFamily::MnlOptionSpecific,
            LeafModel::Isotonic(_) => LeafFamily::Isotonic,
            LeafModel::Logistic(_) => LeafFamily::Logistic,
            LeafModel::Constant(_) => LeafFamily::Constant,
        }
    }

    /// Choice probabilities over `{no-purchase, option 1, ..., option H}`.
    pub fn choice_probs(&self, options: &[Vec<f64>]) -> Result<Vec<f64>> {
        match self {
            LeafModel::Mnl(m) => m.choice_probs(options),
            LeafModel::MnlOptionSpecific(m) => m.choice_probs(options),
            _ => Err(Error::FamilyMismatch {
                family: self.family().to_string(),
                payload: "choice".into(),
            }),
        }
    }

    pub fn win_prob(&self, bid: f64) -> Result<f64> {
        match self {
            LeafModel::Isotonic(m) => Ok(m.predict(bid)),
            LeafModel::Logistic(m) => Ok(m.predict(bid)),
            LeafModel::Constant(m) => Ok(m.probability),
            _ => Err(Error::FamilyMismatch {
                family: self.family().to_string(),
                payload: "auction".into(),
            }),
        }
    }

    /// Training loss of one observation: negative log-likelihood for the
    /// logit families, squared error for the win-curve families.
    pub fn row_loss(&self, decision: &Decision, response: Response) -> Result<f64> {
        match (decision, response) {
            (Decision::Assortment(options), Response::Choice(y)) => {
                let probs = self.choice_probs(options)?;
                let p = probs
                    .get(y as usize)
                    .copied()
                    .ok_or_else(|| Error::InvalidArgument(format!("chosen index {y} out of range")))?;
                Ok(-p.max(f64::MIN_POSITIVE).ln())
            }
            (Decision::Bid(bid), Response::Win(won)) => {
                let p = self.win_prob(*bid)?;
                let y = if won { 1.0 } else { 0.0 };
                match self {
                    LeafModel::Logistic(_) => {
                        let q = if won { p } else { 1.0 - p };
                        Ok(-q.max(f64::MIN_POSITIVE).ln())
                    }
                    _ => Ok((y - p) * (y - p)),
                }
            }
            _ => Err(Error::FamilyMismatch {
                family: self.family().to_string(),
                payload: "mixed".into(),
            }),
        }
    }

    /// One-line parameter summary used by tree rendering.
    pub fn summary(&self) -> String {
        fn fmt_vec(v: &[f64]) -> String {
            let parts: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
            format!("[{}]", parts.join(", "))
        }
        match self {
            LeafModel::Mnl(m) => format!("mnl beta={}", fmt_vec(&m.beta)),
            LeafModel::MnlOptionSpecific(m) => {
                let rows: Vec<String> = m.beta.iter().map(|r| fmt_vec(r)).collect();
                format!("mnl-option-specific beta=[{}]", rows.join(", "))
            }
            LeafModel::Isotonic(m) => format!(
                "isotonic steps={} range=[{:.4}, {:.4}]",
                m.levels.len(),
                m.levels.first().copied().unwrap_or(0.0),
                m.levels.last().copied().unwrap_or(0.0)
            ),
            LeafModel::Logistic(m) => {
                format!("logistic slope={:.4} intercept={:.4}", m.slope, m.intercept)
            }
            LeafModel::Constant(m) => format!("constant p={:.4}", m.probability),
        }
    }
}

/// Summed training loss of `model` over the given rows; excludes any ridge
/// penalty used during fitting.
pub fn loss(model: &LeafModel, data: &Dataset, rows: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for &r in rows {
        total += model.row_loss(data.decision(r), data.response(r))?;
    }
    Ok(total)
}

/// Fits a leaf model of the requested family on `rows`.
///
/// `warm` seeds gradient-based fits with a previous parameter vector; the
/// direct fits (isotonic, constant) ignore it.  `stream` drives SGD batch
/// sampling only.
pub fn fit(
    family: LeafFamily,
    data: &Dataset,
    rows: &[usize],
    cfg: &FitConfig,
    warm: Option<&LeafModel>,
    stream: &mut Stream,
) -> Result<(LeafModel, FitReport)> {
    if rows.is_empty() {
        return Err(Error::EmptyInput("fit called with no rows"));
    }
    if family.payload() != data.kind {
        return Err(Error::FamilyMismatch {
            family: family.to_string(),
            payload: data.kind.to_string(),
        });
    }
    let direct = FitReport { converged: true, iterations: 0, final_grad_norm: 0.0, final_value: 0.0 };
    match family {
        LeafFamily::Mnl => {
            let warm = match warm {
                Some(LeafModel::Mnl(m)) => Some(m.beta.as_slice()),
                _ => None,
            };
            let (m, rep) = mnl::fit_shared(data, rows, cfg, warm, stream)?;
            Ok((LeafModel::Mnl(m), rep))
        }
        LeafFamily::MnlOptionSpecific => {
            let warm = match warm {
                Some(LeafModel::MnlOptionSpecific(m)) => Some(m),
                _ => None,
            };
            let (m, rep) = mnl::fit_option_specific(data, rows, cfg, warm, stream)?;
            Ok((LeafModel::MnlOptionSpecific(m), rep))
        }
        LeafFamily::Isotonic => {
            let mut pairs = Vec::with_capacity(rows.len());
            for &r in rows {
                if let (Decision::Bid(b), Response::Win(w)) = (data.decision(r), data.response(r)) {
                    pairs.push((*b, if w { 1.0 } else { 0.0 }));
                }
            }
            let curve = isotonic::fit(&mut pairs)?;
            Ok((LeafModel::Isotonic(curve), direct))
        }
        LeafFamily::Logistic => {
            let warm = match warm {
                Some(LeafModel::Logistic(m)) => Some([m.slope, m.intercept]),
                _ => None,
            };
            let (m, rep) = logistic::fit(data, rows, cfg, warm.as_ref().map(|w| &w[..]), stream)?;
            Ok((LeafModel::Logistic(m), rep))
        }
        LeafFamily::Constant => {
            let m = constant::fit(data, rows)?;
            Ok((LeafModel::Constant(m), direct))
        }
    }
}
