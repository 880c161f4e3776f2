//! Flag value syntaxes: integer sets (`4`, `4..6`, `3,5,7`, `1..2,5`), real
//! grids (`start:end:step`) and real lists (`10,30,100`).

use std::fmt;
use std::str::FromStr;

/// Sorted, deduplicated set of integers; ranges are inclusive.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntSet(pub Vec<u64>);

impl FromStr for IntSet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let mut out = Vec::new();
        for part in s.split(',') {
            let part = part.trim();
            if let Some((lo, hi)) = part.split_once("..") {
                let lo: u64 = lo.trim().parse().map_err(|_| format!("bad range start in `{part}`"))?;
                let hi: u64 = hi.trim().parse().map_err(|_| format!("bad range end in `{part}`"))?;
                if hi < lo {
                    return Err(format!("range `{part}` is empty (end before start)"));
                }
                out.extend(lo..=hi);
            } else {
                out.push(part.parse().map_err(|_| format!("`{part}` is not a nonnegative integer"))?);
            }
        }
        out.sort_unstable();
        out.dedup();
        Ok(IntSet(out))
    }
}

impl fmt::Display for IntSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(u64::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

/// `start:end:step`, end inclusive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RealGrid {
    pub start: f64,
    pub end: f64,
    pub step: f64,
}

impl FromStr for RealGrid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(format!("expected start:end:step, got `{s}`"));
        }
        let num = |v: &str| v.trim().parse::<f64>().map_err(|_| format!("`{v}` is not a number"));
        let g = RealGrid { start: num(parts[0])?, end: num(parts[1])?, step: num(parts[2])? };
        if !(g.step > 0.0) || g.end < g.start {
            return Err(format!("grid `{s}` needs step > 0 and end ≥ start"));
        }
        Ok(g)
    }
}

impl fmt::Display for RealGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.start, self.end, self.step)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RealList(pub Vec<f64>);

impl FromStr for RealList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| format!("`{v}` is not a number")))
            .collect::<Result<Vec<_>, _>>()
            .map(RealList)
    }
}

impl fmt::Display for RealList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(f64::to_string).collect();
        f.write_str(&parts.join(","))
    }
}
