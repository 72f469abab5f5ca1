//! Plain-text parameter records.
//!
//! One line per parameter: `param <name> <d0>,<d1>,… <v0> <v1> …` with every
//! value printed with 17 significant digits, which round-trips `f64` exactly.

use std::io::{BufRead, Write};

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub fn write_params<W: Write>(w: &mut W, params: &[(String, Tensor)]) -> std::io::Result<()> {
    for (name, t) in params {
        let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        write!(w, "param {name} {}", shape.join(","))?;
        for v in t.data() {
            write!(w, " {v:.16e}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Parses one record line written by [`write_params`].
pub fn parse_param_line(line: &str) -> Result<(String, Tensor)> {
    let mut it = line.split_ascii_whitespace();
    let bad = |m: &str| Error::ModelFormat(format!("{m}: '{}'", truncate(line)));
    if it.next() != Some("param") {
        return Err(bad("expected a 'param' record"));
    }
    let name = it.next().ok_or_else(|| bad("missing parameter name"))?.to_string();
    let shape = it
        .next()
        .ok_or_else(|| bad("missing shape"))?
        .split(',')
        .map(|d| d.parse::<usize>().map_err(|_| bad("bad shape")))
        .collect::<Result<Vec<_>>>()?;
    let data = it
        .map(|v| v.parse::<f64>().map_err(|_| bad("bad value")))
        .collect::<Result<Vec<_>>>()?;
    let t = Tensor::new(shape, data).map_err(|e| Error::ModelFormat(format!("{name}: {e}")))?;
    Ok((name, t))
}

/// Reads every `param` line, skipping blank lines.
pub fn read_params<R: BufRead>(r: R) -> Result<Vec<(String, Tensor)>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line.map_err(|e| Error::ModelFormat(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_param_line(&line)?);
    }
    Ok(out)
}

fn truncate(s: &str) -> String {
    s.chars().take(60).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(vals in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO, 1..40)) {
            let n = vals.len();
            let t = Tensor::new(vec![n], vals).unwrap();
            let mut buf = Vec::new();
            write_params(&mut buf, &[("w".into(), t.clone())]).unwrap();
            let back = read_params(buf.as_slice()).unwrap();
            prop_assert_eq!(back.len(), 1);
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&back[0].1), bits(&t));
        }
    }

    #[test]
    fn malformed_records_rejected() {
        assert!(parse_param_line("weight w 2 1 2").is_err());
        assert!(parse_param_line("param w 2,2 1 2 3").is_err());
        assert!(parse_param_line("param w 2 1 x").is_err());
    }
}
