//! Constant win-rate model: the training-set mean, which minimizes squared
//! error.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Decision, Response};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantModel {
    pub probability: f64,
}

pub fn fit(data: &Dataset, rows: &[usize]) -> Result<ConstantModel> {
    if rows.is_empty() {
        return Err(Error::EmptyInput("constant fit with no rows"));
    }
    let mut wins = 0.0;
    for &r in rows {
        match (data.decision(r), data.response(r)) {
            (Decision::Bid(_), Response::Win(w)) => {
                if w {
                    wins += 1.0;
                }
            }
            _ => {
                return Err(Error::FamilyMismatch {
                    family: "constant".into(),
                    payload: "choice".into(),
                })
            }
        }
    }
    Ok(ConstantModel { probability: wins / rows.len() as f64 })
}
