//! Two-client scalar example: a path and a triangle sharing a one-layer
//! linear model whose local optima point in opposite directions.

use std::fmt;

use crate::client::LocalUpdate;
use crate::gnn::{induced_operator, FlatVector, GroupFilter, ParameterSet};
use crate::graph::{complete_graph, path_graph, NormalizedAdjacency};
use crate::linalg::Matrix;
use crate::metrics::operator_spectrum;
use crate::server::{Aggregator, AggregatorConfig, Epsilon};

use super::HarnessError;

const EXPECTED_A1: [[f64; 3]; 3] = [[0.5, 0.41, 0.0], [0.41, 0.33, 0.41], [0.0, 0.41, 0.5]];
const EXPECTED_SPEC_A1: [f64; 3] = [1.0, 0.5, -0.17];
const EXPECTED_SPEC_A2: [f64; 3] = [1.0, 0.0, 0.0];
const EXPECTED_SPEC_GGRS: [f64; 3] = [0.25, 0.125, -0.0417];
const TOL_PRINTED: f64 = 0.005;
const TOL_EXACT_SPECTRUM: f64 = 1e-9;
const TOL_OPERATOR: f64 = 0.01;

#[derive(Debug, Clone)]
pub struct ToyCheck {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct ToyReport {
    pub a1: Matrix<f64>,
    pub spectrum_a1: Vec<f64>,
    pub spectrum_a2: Vec<f64>,
    pub w_avg: f64,
    pub spectrum_avg: Vec<f64>,
    pub w_ggrs: f64,
    pub spectrum_ggrs: Vec<f64>,
    pub checks: Vec<ToyCheck>,
}

impl ToyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

fn max_dev(got: &[f64], want: &[f64]) -> f64 {
    if got.len() != want.len() {
        return f64::INFINITY;
    }
    got.iter().zip(want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

fn check_close(name: &'static str, got: &[f64], want: &[f64], tol: f64) -> ToyCheck {
    let dev = max_dev(got, want);
    ToyCheck {
        name,
        pass: dev <= tol,
        detail: format!("max deviation {dev:.3e} (tolerance {tol:e})"),
    }
}

fn check_exact(name: &'static str, got: f64, want: f64) -> ToyCheck {
    ToyCheck {
        name,
        pass: got == want,
        detail: format!("got {got}, expected exactly {want}"),
    }
}

fn scalar_update(client_id: usize, template: &FlatVector<f64>, w: f64) -> LocalUpdate<f64> {
    LocalUpdate {
        client_id,
        round: 0,
        delta: FlatVector {
            values: vec![w],
            layout: template.layout.clone(),
        },
        n_train: 3,
    }
}

/// Runs one plain and one regulated aggregation of the updates `+1` (path)
/// and `−1` (triangle) from a zero global weight.
pub fn toy_appendix() -> Result<ToyReport, HarnessError> {
    let a1 = NormalizedAdjacency::from_graph(&path_graph::<f64>(3)?)?;
    let a2 = NormalizedAdjacency::from_graph(&complete_graph::<f64>(3)?)?;
    let spectrum_a1 = operator_spectrum(&a1.to_dense()).expect("normalized adjacency is symmetric");
    let spectrum_a2 = operator_spectrum(&a2.to_dense()).expect("normalized adjacency is symmetric");

    let global = ParameterSet::linear(Matrix::zeros(1, 1));
    let theta = global.flatten(GroupFilter::Shared);
    let updates = [scalar_update(0, &theta, 1.0), scalar_update(1, &theta, -1.0)];

    let plain = Aggregator::new(AggregatorConfig::default(), theta.layout.clone())
        .map_err(HarnessError::Server)?
        .aggregate(&updates)
        .map_err(HarnessError::Server)?;
    let ggrs_cfg = AggregatorConfig {
        beta: 0.5,
        epsilon: Epsilon::Fixed(1.0),
        subspace_dim: 0,
        ..AggregatorConfig::ggrs()
    };
    let ggrs = Aggregator::new(ggrs_cfg, theta.layout.clone())
        .map_err(HarnessError::Server)?
        .aggregate(&updates)
        .map_err(HarnessError::Server)?;

    let operator = |w: f64| -> Result<Vec<f64>, HarnessError> {
        let params = ParameterSet::linear(Matrix::from_fn(1, 1, |_, _| w));
        let t = induced_operator(&params, &a1)?;
        Ok(operator_spectrum(&t).expect("scaled adjacency is symmetric"))
    };
    let w_avg = theta.values[0] + plain.global_delta.values[0];
    let w_ggrs = theta.values[0] + ggrs.global_delta.values[0];
    let spectrum_avg = operator(w_avg)?;
    let spectrum_ggrs = operator(w_ggrs)?;

    let a1_dense = a1.to_dense();
    let expected_a1: Vec<f64> = EXPECTED_A1.iter().flatten().copied().collect();
    let checks = vec![
        check_close("path adjacency entries", a1_dense.as_slice(), &expected_a1, TOL_PRINTED),
        check_close("path adjacency spectrum", &spectrum_a1, &EXPECTED_SPEC_A1, TOL_PRINTED),
        check_close("triangle adjacency spectrum", &spectrum_a2, &EXPECTED_SPEC_A2, TOL_EXACT_SPECTRUM),
        check_exact("plain aggregate weight", w_avg, 0.0),
        ToyCheck {
            name: "plain operator spectrum",
            pass: spectrum_avg.iter().all(|&l| l == 0.0),
            detail: format!("{spectrum_avg:?}"),
        },
        check_exact("regulated aggregate weight", w_ggrs, 0.25),
        check_close("regulated operator spectrum", &spectrum_ggrs, &EXPECTED_SPEC_GGRS, TOL_OPERATOR),
    ];

    Ok(ToyReport {
        a1: a1_dense,
        spectrum_a1,
        spectrum_a2,
        w_avg,
        spectrum_avg,
        w_ggrs,
        spectrum_ggrs,
        checks,
    })
}

fn fmt_list(xs: &[f64]) -> String {
    let items: Vec<String> = xs.iter().map(|x| format!("{x:.4}")).collect();
    format!("{{{}}}", items.join(", "))
}

impl fmt::Display for ToyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "normalized adjacency, path of 3 nodes:")?;
        for i in 0..self.a1.rows() {
            let row: Vec<String> = self.a1.row(i).iter().map(|x| format!("{x:7.4}")).collect();
            writeln!(f, "  [{}]", row.join(" "))?;
        }
        writeln!(f, "spectrum (path):     {}", fmt_list(&self.spectrum_a1))?;
        writeln!(f, "spectrum (triangle): {}", fmt_list(&self.spectrum_a2))?;
        writeln!(f, "W_avg  = {}", self.w_avg)?;
        writeln!(f, "spectrum (W_avg * A_path):  {}", fmt_list(&self.spectrum_avg))?;
        writeln!(f, "W_GGRS = {}", self.w_ggrs)?;
        writeln!(f, "spectrum (W_GGRS * A_path): {}", fmt_list(&self.spectrum_ggrs))?;
        for c in &self.checks {
            writeln!(f, "[{}] {}: {}", if c.pass { "ok" } else { "FAIL" }, c.name, c.detail)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproduces_the_example() {
        let r = toy_appendix().unwrap();
        assert!(r.passed(), "{r}");
        assert_eq!(r.w_avg, 0.0);
        assert_eq!(r.w_ggrs, 0.25);
    }

    #[test]
    fn report_prints_every_value() {
        let text = toy_appendix().unwrap().to_string();
        assert!(text.contains("W_avg  = 0"));
        assert!(text.contains("W_GGRS = 0.25"));
        assert!(!text.contains("FAIL"));
    }
}
