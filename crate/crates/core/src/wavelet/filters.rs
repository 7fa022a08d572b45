//! Filter coefficient tables and the plain-text format they ship in.
//!
//! A table file is a sequence of sections. `#` starts a comment line, a
//! `[name]` line opens a section and every other non-blank line is one
//! decimal coefficient:
//!
//! ```text
//! # Daubechies 6
//! [h0]
//! -0.0010773010853084796
//! ...
//! ```

use std::collections::BTreeMap;

use crate::error::{Error, Result};

const MAX_TAPS: usize = 4096;

pub fn parse_filter_table(text: &str) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| Error::Decode(format!("line {}: unterminated section header", lineno + 1)))?
                .trim();
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(Error::Decode(format!("line {}: bad section name {name:?}", lineno + 1)));
            }
            if out.contains_key(name) {
                return Err(Error::Decode(format!("line {}: duplicate section {name}", lineno + 1)));
            }
            out.insert(name.to_string(), Vec::new());
            current = Some(name.to_string());
            continue;
        }
        let name = current
            .as_ref()
            .ok_or_else(|| Error::Decode(format!("line {}: coefficient before any section", lineno + 1)))?;
        let v: f64 = line
            .parse()
            .map_err(|_| Error::Decode(format!("line {}: not a number: {line:?}", lineno + 1)))?;
        if !v.is_finite() {
            return Err(Error::Decode(format!("line {}: non-finite coefficient", lineno + 1)));
        }
        let taps = out.get_mut(name).expect("section inserted above");
        if taps.len() >= MAX_TAPS {
            return Err(Error::Decode(format!("section {name} exceeds {MAX_TAPS} taps")));
        }
        taps.push(v);
    }
    if let Some((name, _)) = out.iter().find(|(_, v)| v.is_empty()) {
        return Err(Error::Decode(format!("section {name} is empty")));
    }
    Ok(out)
}

/// Two-channel periodic filter bank: analysis pair `(h0, h1)`, synthesis
/// pair `(g0, g1)` and the sampling phase of the decimator.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank {
    pub h0: Vec<f64>,
    pub h1: Vec<f64>,
    pub g0: Vec<f64>,
    pub g1: Vec<f64>,
    pub phase: usize,
}

impl FilterBank {
    pub fn new(h0: Vec<f64>, h1: Vec<f64>, g0: Vec<f64>, g1: Vec<f64>, phase: usize) -> Result<Self> {
        if h0.len() + g0.len() != h1.len() + g1.len() || !(h0.len() + g0.len()).is_multiple_of(2) {
            return Err(Error::Decode(format!(
                "filter lengths ({}, {}, {}, {}) do not form a delay-matched bank",
                h0.len(),
                h1.len(),
                g0.len(),
                g1.len()
            )));
        }
        Ok(FilterBank { h0, h1, g0, g1, phase })
    }

    /// Offset of the synthesis scatter that cancels the analysis delay.
    pub fn synthesis_offset(&self) -> isize {
        self.phase as isize - ((self.h0.len() + self.g0.len()) / 2) as isize + 1
    }

    pub fn max_taps(&self) -> usize {
        self.h0.len().max(self.h1.len()).max(self.g0.len()).max(self.g1.len())
    }

    fn from_table(t: &BTreeMap<String, Vec<f64>>, keys: [&str; 4], scale: f64, phase: usize) -> Result<Self> {
        let get = |k: &str| -> Result<Vec<f64>> {
            t.get(k)
                .map(|v| v.iter().map(|x| x * scale).collect())
                .ok_or_else(|| Error::Decode(format!("missing filter section {k}")))
        };
        FilterBank::new(get(keys[0])?, get(keys[1])?, get(keys[2])?, get(keys[3])?, phase)
    }
}

const DB6_TABLE: &str = include_str!("../../data/filters/db6.txt");
const NEAR_SYM_B_TABLE: &str = include_str!("../../data/filters/near_sym_b.txt");
const QSHIFT_B_TABLE: &str = include_str!("../../data/filters/qshift_b.txt");

/// Orthonormal Daubechies-6 bank.
pub fn db6() -> FilterBank {
    let t = parse_filter_table(DB6_TABLE).expect("bundled db6 table");
    FilterBank::from_table(&t, ["h0", "h1", "g0", "g1"], 1.0, 0).expect("bundled db6 table")
}

/// Level-1 (13,19)-tap near-symmetric bank. The stored taps are normalised
/// for undecimated use; the √2 gain makes the decimated bank reconstruct
/// with unit gain. `phase` selects tree a (0) or tree b (1).
pub fn near_sym_b(phase: usize) -> FilterBank {
    let t = parse_filter_table(NEAR_SYM_B_TABLE).expect("bundled near_sym_b table");
    FilterBank::from_table(&t, ["h0", "h1", "g0", "g1"], std::f64::consts::SQRT_2, phase)
        .expect("bundled near_sym_b table")
}

/// 14-tap q-shift bank for levels >= 2; `tree_a_filters` picks the
/// quarter-sample-delay set.
pub fn qshift_b(tree_a_filters: bool) -> FilterBank {
    let t = parse_filter_table(QSHIFT_B_TABLE).expect("bundled qshift_b table");
    let keys = if tree_a_filters {
        ["h0a", "h1a", "g0a", "g1a"]
    } else {
        ["h0b", "h1b", "g0b", "g1b"]
    };
    FilterBank::from_table(&t, keys, 1.0, 0).expect("bundled qshift_b table")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_tables_parse() {
        let t = parse_filter_table(DB6_TABLE).unwrap();
        assert_eq!(t["h0"].len(), 12);
        let t = parse_filter_table(NEAR_SYM_B_TABLE).unwrap();
        assert_eq!(t["h0"].len(), 13);
        assert_eq!(t["h1"].len(), 19);
        let t = parse_filter_table(QSHIFT_B_TABLE).unwrap();
        assert_eq!(t.len(), 8);
        assert!(t.values().all(|v| v.len() == 14));
    }

    #[test]
    fn db6_lowpass_sums_to_sqrt2() {
        let s: f64 = db6().h0.iter().sum();
        assert!((s - std::f64::consts::SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn rejects_malformed_tables() {
        assert!(parse_filter_table("1.0\n").is_err());
        assert!(parse_filter_table("[a\n1.0").is_err());
        assert!(parse_filter_table("[a]\nfoo").is_err());
        assert!(parse_filter_table("[a]\n").is_err());
        assert!(parse_filter_table("[a]\n1\n[a]\n2").is_err());
        assert!(parse_filter_table("[a]\ninf").is_err());
        assert!(parse_filter_table("# only comments\n").unwrap().is_empty());
    }

    #[test]
    fn synthesis_offsets() {
        assert_eq!(db6().synthesis_offset(), -11);
        assert_eq!(near_sym_b(0).synthesis_offset(), -15);
        assert_eq!(near_sym_b(1).synthesis_offset(), -14);
        assert_eq!(qshift_b(true).synthesis_offset(), -13);
    }
}
