//! Complex literals and candidate-set files.

use qutrit_qsi::state::{Complex, CoeffPair};

/// Parses `re,im`, `rho@phi` (radians) or a bare real number.
pub fn complex(s: &str) -> Result<Complex, String> {
    let s = s.trim();
    let num = |t: &str| -> Result<f64, String> {
        let v: f64 = t.trim().parse().map_err(|_| format!("'{t}' is not a number"))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("'{t}' is not finite"))
        }
    };
    if let Some((rho, phi)) = s.split_once('@') {
        Ok(Complex::from_polar(num(rho)?, num(phi)?))
    } else if let Some((re, im)) = s.split_once(',') {
        Ok(Complex::new(num(re)?, num(im)?))
    } else if s.is_empty() {
        Err("empty complex literal".into())
    } else {
        Ok(Complex::new(num(s)?, 0.0))
    }
}

/// Reads one candidate per line as two complex literals; `#` starts a comment.
pub fn candidate_file(text: &str) -> Result<Vec<CoeffPair>, String> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 2 {
            return Err(format!("line {}: expected 2 coefficients, found {}", i + 1, toks.len()));
        }
        let z1 = complex(toks[0]).map_err(|e| format!("line {}: {e}", i + 1))?;
        let z2 = complex(toks[1]).map_err(|e| format!("line {}: {e}", i + 1))?;
        out.push(CoeffPair::new(z1, z2));
    }
    Ok(out)
}

/// Pair of numbers `a,b`.
pub fn pair(s: &str) -> Result<(f64, f64), String> {
    match list(s)?.as_slice() {
        [a, b] => Ok((*a, *b)),
        v => Err(format!("expected 2 numbers, got {}", v.len())),
    }
}

/// Comma-separated list of numbers.
pub fn list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| format!("'{t}' is not a number")))
        .collect()
}

/// Inclusive range `a..b`.
pub fn usize_range(s: &str) -> Result<Vec<usize>, String> {
    let (a, b) = s.split_once("..").ok_or_else(|| format!("'{s}' is not a range a..b"))?;
    let a: usize = a.trim().parse().map_err(|_| format!("bad range start '{a}'"))?;
    let b: usize = b.trim().parse().map_err(|_| format!("bad range end '{b}'"))?;
    if a > b {
        return Err(format!("empty range {a}..{b}"));
    }
    Ok((a..=b).collect())
}
