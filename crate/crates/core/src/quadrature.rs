//! Globally adaptive Gauss–Kronrod (7/15 point) integration on finite intervals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
// Gauss weights for XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

pub const RULE_NAME: &str = "gauss_kronrod_7_15";
const NODES_PER_PANEL: usize = 15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quadrature {
    #[serde(default = "default_rule")]
    pub rule: String,
    /// Absolute tolerance on the summed error estimate.
    pub abs_tol: f64,
    /// Hard cap on integrand evaluations.
    pub max_nodes: usize,
}

fn default_rule() -> String {
    RULE_NAME.to_string()
}

impl Default for Quadrature {
    fn default() -> Self {
        Self { rule: default_rule(), abs_tol: 1e-10, max_nodes: 200_000 }
    }
}

#[derive(Debug, Clone, Copy)]
struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

fn panel<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Panel {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for (j, (&x, &w)) in XGK[..7].iter().zip(&WGK[..7]).enumerate() {
        let pair = f(c - h * x) + f(c + h * x);
        kron += w * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    Panel { a, b, value: kron * h, error: ((kron - gauss) * h).abs() }
}

impl Quadrature {
    pub fn with_tol(abs_tol: f64) -> Self {
        Self { abs_tol, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rule != RULE_NAME {
            return Err(Error::InvalidParameter(format!("unknown quadrature rule {:?}", self.rule)));
        }
        if !(self.abs_tol > 0.0) || self.max_nodes < NODES_PER_PANEL {
            return Err(Error::InvalidParameter("quadrature tolerance and node cap must be positive".into()));
        }
        Ok(())
    }

    /// Integral of `f` over `[a, b]` (either orientation).
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F, a: f64, b: f64) -> Result<f64> {
        self.integrate_with_breaks(f, &[a, b])
    }

    /// Integral over `[points[0], points[last]]` with the given interior
    /// breakpoints as initial panel edges. Points outside the range or
    /// non-finite are ignored.
    pub fn integrate_with_breaks<F: Fn(f64) -> f64>(&self, f: F, points: &[f64]) -> Result<f64> {
        let (Some(&a), Some(&b)) = (points.first(), points.last()) else {
            return Ok(0.0);
        };
        if !a.is_finite() || !b.is_finite() {
            return Err(Error::QuadratureFailure("infinite integration limit".into()));
        }
        if a == b {
            return Ok(0.0);
        }
        if b < a {
            let rev: Vec<f64> = points.iter().rev().copied().collect();
            return self.integrate_with_breaks(f, &rev).map(|v| -v);
        }
        let mut edges: Vec<f64> = points
            .iter()
            .copied()
            .filter(|p| p.is_finite() && *p >= a && *p <= b)
            .collect();
        edges.sort_by(f64::total_cmp);
        edges.dedup();

        let mut panels: Vec<Panel> = edges.windows(2).map(|w| panel(&f, w[0], w[1])).collect();
        let mut nodes = panels.len() * NODES_PER_PANEL;
        loop {
            let total_err: f64 = panels.iter().map(|p| p.error).sum();
            if !total_err.is_finite() {
                return Err(Error::QuadratureFailure("non-finite integrand value".into()));
            }
            if total_err <= self.abs_tol {
                return Ok(panels.iter().map(|p| p.value).sum());
            }
            if nodes + 2 * NODES_PER_PANEL > self.max_nodes {
                return Err(Error::QuadratureFailure(format!(
                    "error estimate {total_err:.3e} above {:.1e} after {nodes} nodes",
                    self.abs_tol
                )));
            }
            let (worst, _) = panels
                .iter()
                .enumerate()
                .max_by(|x, y| x.1.error.total_cmp(&y.1.error))
                .expect("at least one panel");
            let p = panels.swap_remove(worst);
            let mid = 0.5 * (p.a + p.b);
            if mid <= p.a || mid >= p.b {
                return Err(Error::QuadratureFailure("interval underflow".into()));
            }
            panels.push(panel(&f, p.a, mid));
            panels.push(panel(&f, mid, p.b));
            nodes += 2 * NODES_PER_PANEL;
        }
    }
}
