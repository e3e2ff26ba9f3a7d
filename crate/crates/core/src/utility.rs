//! Linear-in-parameter instantaneous utilities and the weights derived from them.

use std::collections::HashSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{LengthDistanceMap, Network, StateGraph, CAPACITY, LENGTH};

/// Pair attribute equal to 1 when the action reverses the current link.
pub const UTURN: &str = "Uturn";
/// Name of the nested scale parameter, appended after the utility terms.
pub const OMEGA: &str = "omega";

/// An estimated coefficient multiplying one attribute or a product of two.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Term {
    pub name: String,
    pub attrs: Vec<String>,
}

impl Term {
    pub fn new(name: &str, attrs: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            attrs: attrs.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// A term whose coefficient is held constant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedTerm {
    pub coef: f64,
    pub attrs: Vec<String>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Scale {
    /// μ = 1 everywhere.
    #[default]
    Fixed,
    /// μ_k = exp(ω·√SP_kd) with ω estimated.
    Nested,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtilitySpec {
    pub terms: Vec<Term>,
    #[serde(default)]
    pub fixed: Vec<FixedTerm>,
    #[serde(default)]
    pub scale: Scale,
}

impl UtilitySpec {
    pub fn new(terms: Vec<Term>) -> Self {
        Self {
            terms,
            fixed: Vec::new(),
            scale: Scale::Fixed,
        }
    }

    pub fn with_fixed(mut self, coef: f64, attrs: &[&str]) -> Self {
        self.fixed.push(FixedTerm {
            coef,
            attrs: attrs.iter().map(|s| s.to_string()).collect(),
        });
        self
    }

    pub fn nested(mut self) -> Self {
        self.scale = Scale::Nested;
        self
    }

    /// `(β_len + β_cap·Capacity)·Length − 10·Uturn`.
    pub fn sioux_falls() -> Self {
        Self::new(vec![
            Term::new("len", &[LENGTH]),
            Term::new("cap", &[CAPACITY, LENGTH]),
        ])
        .with_fixed(-10.0, &[UTURN])
    }

    pub fn is_nested(&self) -> bool {
        self.scale == Scale::Nested
    }

    /// Free parameters: one per term, plus ω for nested scales.
    pub fn n_params(&self) -> usize {
        self.terms.len() + usize::from(self.is_nested())
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.terms.iter().map(|t| t.name.clone()).collect();
        if self.is_nested() {
            names.push(OMEGA.to_string());
        }
        names
    }

    /// Splits a parameter vector into utility coefficients and ω (0 when fixed).
    pub fn split<'a>(&self, theta: &'a [f64]) -> Result<(&'a [f64], f64)> {
        if theta.len() != self.n_params() {
            return Err(Error::Dimension {
                expected: self.n_params(),
                got: theta.len(),
            });
        }
        if let Some(bad) = theta.iter().find(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("parameter {bad}")));
        }
        let n = self.terms.len();
        let omega = if self.is_nested() { theta[n] } else { 0.0 };
        Ok((&theta[..n], omega))
    }

    pub fn validate(&self, network: &Network) -> Result<()> {
        let mut names = HashSet::new();
        for t in &self.terms {
            if t.name == OMEGA || !names.insert(t.name.as_str()) {
                return Err(Error::Spec(format!("duplicate or reserved parameter name `{}`", t.name)));
            }
        }
        let exprs = self
            .terms
            .iter()
            .map(|t| &t.attrs)
            .chain(self.fixed.iter().map(|f| &f.attrs));
        for attrs in exprs {
            if attrs.is_empty() || attrs.len() > 2 {
                return Err(Error::Spec(format!(
                    "attribute expression {attrs:?} must name one attribute or a product of two"
                )));
            }
            for a in attrs {
                if a != UTURN && network.attr_index(a).is_none() {
                    return Err(Error::UnknownAttribute(a.clone()));
                }
            }
        }
        for f in &self.fixed {
            if !f.coef.is_finite() {
                return Err(Error::NonFinite(format!("fixed coefficient {}", f.coef)));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
enum Source {
    Uturn,
    Column(usize),
}

fn resolve(network: &Network, attrs: &[String]) -> Result<Vec<Source>> {
    attrs
        .iter()
        .map(|a| {
            if a == UTURN {
                Ok(Source::Uturn)
            } else {
                network
                    .attr_index(a)
                    .map(Source::Column)
                    .ok_or_else(|| Error::UnknownAttribute(a.clone()))
            }
        })
        .collect()
}

fn eval(graph: &StateGraph, e: usize, sources: &[Source]) -> f64 {
    sources
        .iter()
        .map(|s| match *s {
            Source::Uturn => f64::from(u8::from(graph.uturn(e))),
            Source::Column(c) => graph.target_attr(e, c),
        })
        .product()
}

/// Term values `x(a|k)` and the fixed-term total for every edge of a state graph.
#[derive(Clone, Debug)]
pub struct EdgeFeatures {
    n_terms: usize,
    x: Vec<f64>,
    fixed: Vec<f64>,
}

impl EdgeFeatures {
    pub fn compile(spec: &UtilitySpec, graph: &StateGraph) -> Result<Self> {
        spec.validate(graph.network())?;
        let terms = spec
            .terms
            .iter()
            .map(|t| resolve(graph.network(), &t.attrs))
            .collect::<Result<Vec<_>>>()?;
        let fixed_terms = spec
            .fixed
            .iter()
            .map(|f| Ok((f.coef, resolve(graph.network(), &f.attrs)?)))
            .collect::<Result<Vec<_>>>()?;

        let n_edges = graph.n_edges();
        let mut x = Vec::with_capacity(n_edges * terms.len());
        let mut fixed = Vec::with_capacity(n_edges);
        for e in 0..n_edges {
            // transitions into absorbing states carry no attributes
            let absorbing = !graph.is_link(graph.target(e));
            for t in &terms {
                x.push(if absorbing { 0.0 } else { eval(graph, e, t) });
            }
            let f: f64 = if absorbing {
                0.0
            } else {
                fixed_terms.iter().map(|(c, s)| c * eval(graph, e, s)).sum()
            };
            fixed.push(f);
        }
        if let Some(bad) = x.iter().chain(&fixed).find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("attribute value {bad}")));
        }
        Ok(Self {
            n_terms: terms.len(),
            x,
            fixed,
        })
    }

    pub fn n_terms(&self) -> usize {
        self.n_terms
    }

    pub fn n_edges(&self) -> usize {
        self.fixed.len()
    }

    pub fn row(&self, e: usize) -> &[f64] {
        &self.x[e * self.n_terms..(e + 1) * self.n_terms]
    }

    pub fn fixed(&self, e: usize) -> f64 {
        self.fixed[e]
    }

    /// `v(a|k) = Σ β_i x_i(a|k) + fixed(a|k)` for every edge.
    pub fn utilities(&self, beta: &[f64]) -> Vec<f64> {
        debug_assert_eq!(beta.len(), self.n_terms);
        (0..self.n_edges())
            .map(|e| {
                self.row(e)
                    .iter()
                    .zip(beta)
                    .map(|(x, b)| x * b)
                    .sum::<f64>()
                    + self.fixed[e]
            })
            .collect()
    }
}

/// Instantaneous utilities `v(a|k)` and weights `M_ka = exp(v(a|k))`, stored
/// per edge of the state graph (zero weight wherever `δ(a|k) = 0`).
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMatrix {
    pub v: Vec<f64>,
    pub m: Vec<f64>,
}

impl WeightMatrix {
    pub fn from_utilities(v: Vec<f64>) -> Self {
        let m = v.iter().map(|x| x.exp()).collect();
        Self { v, m }
    }

    pub fn to_dense(&self, graph: &StateGraph) -> DMatrix<f64> {
        let n = graph.n_states();
        let mut out = DMatrix::zeros(n, n);
        for e in 0..graph.n_edges() {
            out[(graph.source(e), graph.target(e))] = self.m[e];
        }
        out
    }
}

/// Evaluates the utility specification at `theta` (ω, if any, is ignored here).
pub fn evaluate_utilities(spec: &UtilitySpec, theta: &[f64], graph: &StateGraph) -> Result<WeightMatrix> {
    let (beta, _) = spec.split(theta)?;
    let features = EdgeFeatures::compile(spec, graph)?;
    Ok(WeightMatrix::from_utilities(features.utilities(beta)))
}

/// `μ_k = exp(ω·√SP_kd)`; states that cannot reach the destination get 1.
pub fn nested_scales(omega: f64, sp: &LengthDistanceMap) -> Vec<f64> {
    sp.as_slice()
        .iter()
        .map(|&d| if d.is_finite() { (omega * d.sqrt()).exp() } else { 1.0 })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_state_graph, length_distances, synthetic, Link, Node};

    fn two_link_net(cap: f64) -> Network {
        let nodes = (1..=3).map(|id| Node { id, x: 0.0, y: 0.0 }).collect();
        let links = vec![
            Link { id: 1, tail: 1, head: 2, attrs: vec![1.0, cap] },
            Link { id: 2, tail: 2, head: 3, attrs: vec![1.0, cap] },
            Link { id: 3, tail: 2, head: 1, attrs: vec![0.0001, 0.0] },
        ];
        Network::new(nodes, links, vec![LENGTH.into(), CAPACITY.into()]).unwrap()
    }

    #[test]
    fn sioux_falls_form_on_plain_transition() {
        let net = two_link_net(0.5);
        let g = build_state_graph(&net, &[3], &[]).unwrap();
        let w = evaluate_utilities(&UtilitySpec::sioux_falls(), &[-2.0, -1.5], &g).unwrap();
        let e = g.edge(g.link_state(1).unwrap(), g.link_state(2).unwrap()).unwrap();
        assert!((w.v[e] + 2.75).abs() < 1e-12);
        assert!((w.m[e] - (-2.75f64).exp()).abs() < 1e-15);
        // into the absorbing state
        let e = g.edge(g.link_state(2).unwrap(), g.dest_state(3).unwrap()).unwrap();
        assert_eq!((w.v[e], w.m[e]), (0.0, 1.0));
    }

    #[test]
    fn uturn_only_gives_minus_ten() {
        let net = synthetic::line(&[(1, 2, 1.0), (2, 1, 1.0)]);
        let spec = UtilitySpec::new(vec![Term::new("len", &[LENGTH])]).with_fixed(-10.0, &[UTURN]);
        let g = build_state_graph(&net, &[], &[]).unwrap();
        let w = evaluate_utilities(&spec, &[0.0], &g).unwrap();
        let e = g.edge(g.link_state(1).unwrap(), g.link_state(2).unwrap()).unwrap();
        assert_eq!(w.v[e], -10.0);
        assert_eq!(w.m[e], (-10.0f64).exp());
    }

    #[test]
    fn green_interaction() {
        let nodes = (1..=3).map(|id| Node { id, x: 0.0, y: 0.0 }).collect();
        let links = vec![
            Link { id: 1, tail: 1, head: 2, attrs: vec![10.0, 0.0, 1.0] },
            Link { id: 2, tail: 2, head: 3, attrs: vec![10.0, 0.0, 1.0] },
        ];
        let net = Network::new(nodes, links, vec!["Length".into(), "Crosswalk".into(), "Green".into()]).unwrap();
        let spec = UtilitySpec::new(vec![
            Term::new("len", &["Length"]),
            Term::new("cross", &["Crosswalk"]),
            Term::new("green", &["Green", "Length"]),
        ])
        .with_fixed(-10.0, &[UTURN]);
        let g = build_state_graph(&net, &[3], &[1]).unwrap();
        let w = evaluate_utilities(&spec, &[-0.266, -0.791, 0.049], &g).unwrap();
        let e = g.edge(g.link_state(1).unwrap(), g.link_state(2).unwrap()).unwrap();
        assert!((w.v[e] + 2.17).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_specs() {
        let net = two_link_net(1.0);
        let g = build_state_graph(&net, &[3], &[]).unwrap();
        let spec = UtilitySpec::sioux_falls();
        assert!(matches!(
            evaluate_utilities(&spec, &[1.0], &g),
            Err(Error::Dimension { expected: 2, got: 1 })
        ));
        let bad = UtilitySpec::new(vec![Term::new("x", &["Nope"])]);
        assert!(matches!(bad.validate(&net), Err(Error::UnknownAttribute(_))));
        let triple = UtilitySpec::new(vec![Term::new("x", &[LENGTH, LENGTH, LENGTH])]);
        assert!(matches!(triple.validate(&net), Err(Error::Spec(_))));
        let dup = UtilitySpec::new(vec![Term::new("x", &[LENGTH]), Term::new("x", &[CAPACITY])]);
        assert!(dup.validate(&net).is_err());
    }

    #[test]
    fn spec_json_shape() {
        let json = r#"{"terms":[{"name":"len","attrs":["Length"]}],
                       "fixed":[{"coef":-10,"attrs":["Uturn"]}],
                       "scale":{"type":"nested"}}"#;
        let spec: UtilitySpec = serde_json::from_str(json).unwrap();
        assert!(spec.is_nested());
        assert_eq!(spec.param_names(), vec!["len", "omega"]);
    }

    #[test]
    fn scales() {
        let net = synthetic::line(&[(1, 2, 100.0)]);
        let g = build_state_graph(&net, &[2], &[1]).unwrap();
        let sp = length_distances(&g, 2).unwrap();
        let mu = nested_scales(0.091, &sp);
        assert!((mu[g.origin_state(1).unwrap()] - 0.91f64.exp()).abs() < 1e-12);
        assert!((mu[g.origin_state(1).unwrap()] - 2.484).abs() < 1e-3);
        assert_eq!(mu[g.dest_state(2).unwrap()], 1.0);
        assert!(nested_scales(0.0, &sp).iter().all(|&m| m == 1.0));
    }

    #[test]
    fn term_order_does_not_change_weights() {
        let net = synthetic::sioux_falls();
        let g = build_state_graph(&net, &[10], &[]).unwrap();
        let a = UtilitySpec::sioux_falls();
        let mut b = a.clone();
        b.terms.reverse();
        let wa = evaluate_utilities(&a, &[-2.0, -1.5], &g).unwrap();
        let wb = evaluate_utilities(&b, &[-1.5, -2.0], &g).unwrap();
        for (x, y) in wa.m.iter().zip(&wb.m) {
            assert!((x - y).abs() <= 1e-15 * x.abs());
        }
    }
}
