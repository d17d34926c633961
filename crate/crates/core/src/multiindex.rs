use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Multi-index `α = (α₁, …, αₙ)` of a partial derivative `D^α`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(parts: Vec<u32>) -> Self {
        MultiIndex(parts)
    }

    pub fn zero(dim: usize) -> Self {
        MultiIndex(vec![0; dim])
    }

    /// Unit multi-index `e_axis`.
    pub fn unit(dim: usize, axis: usize) -> Self {
        let mut parts = vec![0; dim];
        parts[axis] = 1;
        MultiIndex(parts)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Total order `|α|`.
    pub fn order(&self) -> usize {
        self.0.iter().map(|&a| a as usize).sum()
    }

    pub fn parts(&self) -> &[u32] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&a| a == 0)
    }

    /// `α!`
    pub fn factorial(&self) -> f64 {
        self.0.iter().map(|&a| (1..=a).map(f64::from).product::<f64>()).product()
    }

    /// Sequence of axes whose successive differentiation yields `D^α`.
    pub fn axes(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .flat_map(|(axis, &a)| std::iter::repeat_n(axis, a as usize))
            .collect()
    }

    /// All multi-indices of dimension `dim` with `|α| = order`, in graded-lex order.
    pub fn all_of_order(dim: usize, order: usize) -> Vec<MultiIndex> {
        let mut out = Vec::new();
        let mut current = vec![0u32; dim];
        fill(&mut current, 0, order as u32, &mut out);
        out
    }
}

fn fill(current: &mut Vec<u32>, axis: usize, remaining: u32, out: &mut Vec<MultiIndex>) {
    if axis + 1 == current.len() {
        current[axis] = remaining;
        out.push(MultiIndex(current.clone()));
        return;
    }
    if current.is_empty() {
        return;
    }
    for a in (0..=remaining).rev() {
        current[axis] = a;
        fill(current, axis + 1, remaining - a, out);
    }
    current[axis] = 0;
}

impl fmt::Display for MultiIndex {
    /// Dash-joined components, e.g. `1-0`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(u32::to_string).collect();
        f.write_str(&parts.join("-"))
    }
}

impl FromStr for MultiIndex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.split('-')
            .map(|p| {
                p.trim()
                    .parse::<u32>()
                    .map_err(|_| Error::InvalidParameter(format!("bad multi-index `{s}`")))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(MultiIndex)
    }
}

impl From<Vec<u32>> for MultiIndex {
    fn from(v: Vec<u32>) -> Self {
        MultiIndex(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_and_parse() {
        let a = MultiIndex::new(vec![1, 0, 2]);
        assert_eq!(a.to_string(), "1-0-2");
        assert_eq!("1-0-2".parse::<MultiIndex>().unwrap(), a);
        assert!("1-x".parse::<MultiIndex>().is_err());
    }

    #[test]
    fn enumerates_graded_lex() {
        let all = MultiIndex::all_of_order(2, 2);
        let parts: Vec<_> = all.iter().map(|a| a.parts().to_vec()).collect();
        assert_eq!(parts, vec![vec![2, 0], vec![1, 1], vec![0, 2]]);
        assert_eq!(MultiIndex::all_of_order(3, 2).len(), 6);
    }

    #[test]
    fn factorial_and_axes() {
        let a = MultiIndex::new(vec![3, 2]);
        assert_eq!(a.factorial(), 12.0);
        assert_eq!(a.axes(), vec![0, 0, 0, 1, 1]);
        assert_eq!(a.order(), 5);
    }
}
