//! Candidate PDE terms: products of at most two spatial derivatives of `u`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::net::MAX_X_ORDER;

/// `∂^a u/∂x^a`, optionally multiplied by `∂^b u/∂x^b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Candidate {
    order: u8,
    times: Option<u8>,
}

impl Candidate {
    pub fn derivative(order: u8) -> Result<Self> {
        Self::new(order, None)
    }

    pub fn product(a: u8, b: u8) -> Result<Self> {
        Self::new(a.min(b), Some(a.max(b)))
    }

    fn new(order: u8, times: Option<u8>) -> Result<Self> {
        let max = order.max(times.unwrap_or(0)) as usize;
        if max > MAX_X_ORDER {
            return Err(Error::Domain(format!(
                "spatial order {max} exceeds the supported {MAX_X_ORDER}"
            )));
        }
        Ok(Candidate { order, times })
    }

    /// Derivative orders of the factors.
    pub fn factors(&self) -> (usize, Option<usize>) {
        (self.order as usize, self.times.map(usize::from))
    }

    pub fn max_order(&self) -> usize {
        self.order.max(self.times.unwrap_or(0)) as usize
    }

    /// Whether the term is linear in `u`.
    pub fn is_linear(&self) -> bool {
        self.times.is_none()
    }

    /// Value given spatial derivatives `d[k] = ∂^k u/∂x^k`.
    #[inline]
    pub fn evaluate(&self, d: &[f64]) -> f64 {
        let a = d[self.order as usize];
        match self.times {
            None => a,
            Some(b) => a * d[b as usize],
        }
    }

    pub fn name(&self) -> String {
        self.to_string()
    }
}

fn factor_name(order: u8) -> String {
    if order == 0 {
        "u".to_string()
    } else {
        format!("u_{}", "x".repeat(order as usize))
    }
}

impl fmt::Display for Candidate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.times {
            None => write!(f, "{}", factor_name(self.order)),
            Some(b) if b == self.order => write!(f, "{}^2", factor_name(b)),
            Some(b) => write!(f, "{}*{}", factor_name(self.order), factor_name(b)),
        }
    }
}

fn parse_factor(s: &str) -> Result<u8> {
    let s = s.trim();
    if s == "u" {
        return Ok(0);
    }
    match s.strip_prefix("u_") {
        Some(xs) if !xs.is_empty() && xs.chars().all(|c| c == 'x') => Ok(xs.len() as u8),
        _ => Err(Error::Config(format!("unrecognized derivative factor '{s}'"))),
    }
}

impl FromStr for Candidate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(base) = s.strip_suffix("^2") {
            let k = parse_factor(base)?;
            return Candidate::product(k, k);
        }
        let parts: Vec<&str> = s.split('*').collect();
        match parts.as_slice() {
            [one] => Candidate::derivative(parse_factor(one)?),
            [a, b] => Candidate::product(parse_factor(a)?, parse_factor(b)?),
            _ => Err(Error::Config(format!("unrecognized candidate '{s}'"))),
        }
    }
}

impl Serialize for Candidate {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Candidate {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Ordered, duplicate-free list of candidate terms.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct CandidateSet {
    items: Vec<Candidate>,
}

impl<'de> Deserialize<'de> for CandidateSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let items = Vec::<Candidate>::deserialize(d)?;
        CandidateSet::new(items).map_err(serde::de::Error::custom)
    }
}

impl Default for CandidateSet {
    /// `u, u_x, u_xx, u_xxx, u_xxxx, u*u_x, u*u_xx, u*u_xxx, u*u_xxxx, u^2, u_x^2`.
    fn default() -> Self {
        let mut items: Vec<Candidate> = (0..=4).map(|k| Candidate { order: k, times: None }).collect();
        items.extend((1..=4).map(|k| Candidate { order: 0, times: Some(k) }));
        items.push(Candidate { order: 0, times: Some(0) });
        items.push(Candidate { order: 1, times: Some(1) });
        CandidateSet { items }
    }
}

impl CandidateSet {
    pub fn new(items: Vec<Candidate>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::Config("candidate set is empty".into()));
        }
        for (i, c) in items.iter().enumerate() {
            if items[..i].contains(c) {
                return Err(Error::Config(format!("duplicate candidate {c}")));
            }
        }
        Ok(CandidateSet { items })
    }

    pub fn parse<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        Self::new(
            names
                .iter()
                .map(|n| n.as_ref().parse())
                .collect::<Result<Vec<_>>>()?,
        )
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Candidate> {
        self.items.iter()
    }

    pub fn get(&self, i: usize) -> Candidate {
        self.items[i]
    }

    pub fn as_slice(&self) -> &[Candidate] {
        &self.items
    }

    pub fn names(&self) -> Vec<String> {
        self.items.iter().map(Candidate::name).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        let c: Candidate = name.parse().ok()?;
        self.items.iter().position(|x| *x == c)
    }

    /// Highest spatial order any term needs (at least 1).
    pub fn max_order(&self) -> usize {
        self.items.iter().map(Candidate::max_order).max().unwrap_or(0).max(1)
    }

    /// Coefficient vector with the named entries set and the rest zero.
    pub fn coefficients(&self, named: &[(&str, f64)]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.len()];
        for &(name, value) in named {
            let i = self
                .index_of(name)
                .ok_or_else(|| Error::Config(format!("candidate '{name}' is not in the set")))?;
            out[i] = value;
        }
        Ok(out)
    }
}
