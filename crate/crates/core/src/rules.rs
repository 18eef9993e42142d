//! Root-point search directions and the single-layer propagation rules derived from them.
//!
//! Every rule picks a line `x̃ = a − t·v_j` through the layer input and a root point on it.
//! Hyperplane rules (`w2`, `zplus`, `gamma`) put the root on the neuron's hyperplane
//! `w_j·x + b_j = 0`; `lrp0` roots at the origin and `eps` is its stabilized variant.
//!
//! The `gamma` direction is `a ⊙ (1 + γ·1[w ≥ 0])`. The alternative grouping
//! `1 + γ·1[w ≥ 0] ⊙ a` does not converge to the `zplus` direction as `γ` grows, so it is not
//! offered.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{dot_const, Scalar};
use crate::error::{Error, Result};
use crate::net::LayerSpec;
use crate::vecops::dot;

/// `|w·v|` below this is treated as an orthogonal search direction.
pub const ORTHOGONAL_TOL: f64 = 1e-12;

/// Default absolute tolerance for `lrp0` denominators.
pub const DEGENERATE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum RuleKind {
    Lrp0,
    Epsilon(f64),
    W2,
    /// Also accepted as `ab:1:0`.
    ZPlus,
    Gamma(f64),
}

impl RuleKind {
    /// The five rule families with the parameters used throughout the test suite.
    pub fn defaults() -> [RuleKind; 5] {
        [
            RuleKind::Lrp0,
            RuleKind::Epsilon(1e-6),
            RuleKind::W2,
            RuleKind::ZPlus,
            RuleKind::Gamma(1.0),
        ]
    }

    /// Rules whose roots lie on the neuron's hyperplane. These conserve relevance exactly.
    pub fn is_hyperplane(self) -> bool {
        matches!(self, RuleKind::W2 | RuleKind::ZPlus | RuleKind::Gamma(_))
    }

    fn validate(self) -> Result<Self> {
        match self {
            RuleKind::Epsilon(e) if !(e > 0.0 && e.is_finite()) => {
                Err(Error::RuleParse(format!("eps:{e} (epsilon must be > 0)")))
            }
            RuleKind::Gamma(g) if !(g >= 0.0 && g.is_finite()) => {
                Err(Error::RuleParse(format!("gamma:{g} (gamma must be >= 0)")))
            }
            rule => Ok(rule),
        }
    }
}

impl fmt::Display for RuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RuleKind::Lrp0 => f.write_str("lrp0"),
            RuleKind::Epsilon(e) => write!(f, "eps:{e}"),
            RuleKind::W2 => f.write_str("w2"),
            RuleKind::ZPlus => f.write_str("zplus"),
            RuleKind::Gamma(g) => write!(f, "gamma:{g}"),
        }
    }
}

impl FromStr for RuleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let param = |p: &str| p.parse::<f64>().map_err(|_| Error::RuleParse(s.to_string()));
        let rule = match s.to_ascii_lowercase().as_str() {
            "lrp0" => RuleKind::Lrp0,
            "w2" => RuleKind::W2,
            "zplus" | "ab:1:0" => RuleKind::ZPlus,
            other => match other.split_once(':') {
                Some(("eps", p)) => RuleKind::Epsilon(param(p)?),
                Some(("gamma", p)) => RuleKind::Gamma(param(p)?),
                _ => return Err(Error::RuleParse(s.to_string())),
            },
        };
        rule.validate()
    }
}

impl TryFrom<String> for RuleKind {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<RuleKind> for String {
    fn from(rule: RuleKind) -> String {
        rule.to_string()
    }
}

/// Taylor root of one neuron: `point = input − step·direction`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RootPoint {
    pub layer: usize,
    pub neuron: usize,
    pub point: Vec<f64>,
    pub direction: Vec<f64>,
    #[serde(rename = "t")]
    pub step: f64,
    /// `w_j·x̃ + b_j`
    pub residual: f64,
}

impl RootPoint {
    /// Attaches the layer and neuron the root belongs to.
    pub fn located(mut self, layer: usize, neuron: usize) -> Self {
        self.layer = layer;
        self.neuron = neuron;
        self
    }

    /// The point `a − step·direction`, with its residual `w·x̃ + b` for the neuron `(w, b)`.
    pub fn along(w: &[f64], b: f64, a: &[f64], direction: Vec<f64>, step: f64) -> Self {
        let point: Vec<f64> = a.iter().zip(&direction).map(|(ai, vi)| ai - step * vi).collect();
        let residual = dot(w, &point) + b;
        RootPoint {
            layer: 0,
            neuron: 0,
            point,
            direction,
            step,
            residual,
        }
    }
}

/// Search direction `v_j` of `rule` for weights `w` at layer input `a`.
pub fn search_direction(rule: RuleKind, w: &[f64], a: &[f64]) -> Vec<f64> {
    direction(rule, w, a)
}

pub(crate) fn direction<S: Scalar>(rule: RuleKind, w: &[f64], a: &[S]) -> Vec<S> {
    debug_assert_eq!(w.len(), a.len());
    match rule {
        RuleKind::Lrp0 | RuleKind::Epsilon(_) => a.to_vec(),
        RuleKind::W2 => w.iter().zip(a).map(|(&wi, ai)| ai.lift(wi)).collect(),
        RuleKind::ZPlus => w
            .iter()
            .zip(a)
            .map(|(&wi, &ai)| if wi >= 0.0 { ai } else { ai.lift(0.0) })
            .collect(),
        RuleKind::Gamma(g) => w
            .iter()
            .zip(a)
            .map(|(&wi, &ai)| if wi >= 0.0 { ai.scale(1.0 + g) } else { ai })
            .collect(),
    }
}

fn check_orthogonal(w: &[f64], v: &[f64]) -> Result<f64> {
    let d = dot(w, v);
    if d.abs() < ORTHOGONAL_TOL {
        return Err(Error::OrthogonalDirection { dot: d });
    }
    Ok(d)
}

/// Root on the line through `a` along the rule's direction.
///
/// Hyperplane rules solve `w·(a − t·v) + b = 0`. `lrp0` and `eps` root at the origin, which is
/// recorded as direction `a` with step 1.
pub fn find_root_linear(rule: RuleKind, w: &[f64], b: f64, a: &[f64]) -> Result<RootPoint> {
    check_lengths(w, a)?;
    if !rule.is_hyperplane() {
        if a.iter().all(|&x| x == 0.0) {
            return Err(Error::ZeroRelevance);
        }
        return Ok(RootPoint::along(w, b, a, a.to_vec(), 1.0));
    }
    let v = search_direction(rule, w, a);
    let d = check_orthogonal(w, &v)?;
    let z = dot(w, a) + b;
    if z == 0.0 {
        return Err(Error::ZeroRelevance);
    }
    Ok(RootPoint::along(w, b, a, v, z / d))
}

/// Root used by the train-free model: the step is chosen so that `w·(a − x̃) = r`, the
/// neuron's upstream relevance. `lrp0` and `eps` search along `a`.
pub fn find_root_train_free(rule: RuleKind, w: &[f64], b: f64, a: &[f64], r: f64) -> Result<RootPoint> {
    check_lengths(w, a)?;
    let v = search_direction(rule, w, a);
    let d = check_orthogonal(w, &v)?;
    if r == 0.0 {
        return Err(Error::ZeroRelevance);
    }
    Ok(RootPoint::along(w, b, a, v, r / d))
}

/// Differentiable form of [`find_root_linear`]'s point, for roots that move with the input.
pub(crate) fn linear_root_point<S: Scalar>(rule: RuleKind, w: &[f64], b: f64, a: &[S]) -> Result<Vec<S>> {
    let zero = a[0].lift(0.0);
    if !rule.is_hyperplane() {
        return Ok(vec![zero; a.len()]);
    }
    let v = direction(rule, w, a);
    let d = dot_const(w, &v);
    if d.value().abs() < ORTHOGONAL_TOL {
        return Err(Error::OrthogonalDirection { dot: d.value() });
    }
    let z = dot_const(w, a) + zero.lift(b);
    if z.value() == 0.0 {
        return Err(Error::ZeroRelevance);
    }
    let t = z / d;
    Ok(a.iter().zip(&v).map(|(&ai, &vi)| ai - t * vi).collect())
}

fn check_lengths(w: &[f64], a: &[f64]) -> Result<()> {
    if w.len() != a.len() {
        return Err(Error::InputShape {
            expected: w.len(),
            got: a.len(),
        });
    }
    if let Some(index) = a.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput { index });
    }
    Ok(())
}

/// One-layer relevance redistribution `R^l` from upstream relevance `r_upper`, using the
/// default denominator tolerance.
pub fn propagate_closed_form(rule: RuleKind, layer: &LayerSpec, a: &[f64], r_upper: &[f64]) -> Result<Vec<f64>> {
    propagate_closed_form_with_tol(rule, layer, a, r_upper, DEGENERATE_TOL)
}

/// As [`propagate_closed_form`], with an explicit `lrp0` denominator tolerance.
///
/// * `lrp0`: `R_i = Σ_j a_i w_ji R_j / z_j` with `z_j = w_j·a + b_j`.
/// * `eps`: denominator `z_j + ε·sign(z_j)`, where `sign(0) = +1`.
/// * hyperplane rules: `R = Σ_j (w_j ⊙ v_j)/(w_j·v_j)·R_j`; neurons with an orthogonal
///   direction are skipped.
pub fn propagate_closed_form_with_tol(
    rule: RuleKind,
    layer: &LayerSpec,
    a: &[f64],
    r_upper: &[f64],
    tol: f64,
) -> Result<Vec<f64>> {
    check_lengths(layer.row(0), a)?;
    if r_upper.len() != layer.out_dim() {
        return Err(Error::InputShape {
            expected: layer.out_dim(),
            got: r_upper.len(),
        });
    }
    let mut out = vec![0.0; a.len()];
    for (j, (w, &rj)) in layer.rows().zip(r_upper).enumerate() {
        if rj == 0.0 {
            continue;
        }
        match rule {
            RuleKind::Lrp0 | RuleKind::Epsilon(_) => {
                let z = dot(w, a) + layer.bias()[j];
                let denom = match rule {
                    RuleKind::Epsilon(eps) => z + eps * if z >= 0.0 { 1.0 } else { -1.0 },
                    _ if z.abs() < tol => return Err(Error::DegenerateDenominator { neuron: j, value: z }),
                    _ => z,
                };
                let c = rj / denom;
                for ((o, wi), ai) in out.iter_mut().zip(w).zip(a) {
                    *o += ai * wi * c;
                }
            }
            _ => {
                let v = search_direction(rule, w, a);
                let d = dot(w, &v);
                if d.abs() < ORTHOGONAL_TOL {
                    continue;
                }
                let c = rj / d;
                for ((o, wi), vi) in out.iter_mut().zip(w).zip(&v) {
                    *o += wi * vi * c;
                }
            }
        }
    }
    Ok(out)
}
