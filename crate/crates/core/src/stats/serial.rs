//! Text record pushed from a client to the server:
//!
//! ```text
//! CLIENTSTATS v1 <variant> <num_layers>
//! layer <channels>
//! mean <v> <v> ...
//! var <v> <v> ...
//! ...
//! ```
//!
//! Reals are written with 17 significant digits, enough to round-trip an
//! `f64` exactly.

use std::fmt::Write as _;

use crate::scalar::Scalar;
use crate::stats::{ClientStats, LayerGaussian, StatsError, StatsVariant};

const MAGIC: &str = "CLIENTSTATS v1";

pub fn stats_to_text<S: Scalar>(s: &ClientStats<S>) -> String {
    let mut out = String::new();
    writeln!(out, "{MAGIC} {} {}", s.variant.tag(), s.layers.len()).unwrap();
    let row = |out: &mut String, key: &str, vals: &[S]| {
        out.push_str(key);
        for v in vals {
            write!(out, " {:.16e}", v.to_f64_lossy()).unwrap();
        }
        out.push('\n');
    };
    for l in &s.layers {
        writeln!(out, "layer {}", l.channels()).unwrap();
        row(&mut out, "mean", &l.mean);
        row(&mut out, "var", &l.var);
    }
    out
}

pub fn stats_from_text<S: Scalar>(text: &str) -> Result<ClientStats<S>, StatsError> {
    let bad = |m: String| StatsError::Parse(m);
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty record".into()))?;
    let rest = header
        .strip_prefix(MAGIC)
        .ok_or_else(|| bad(format!("bad header `{header}`")))?;
    let toks: Vec<&str> = rest.split_whitespace().collect();
    let [tag, count] = toks.as_slice() else {
        return Err(bad(format!("bad header `{header}`")));
    };
    let variant = StatsVariant::from_tag(tag).ok_or_else(|| bad(format!("unknown variant `{tag}`")))?;
    let count: usize = count.parse().map_err(|_| bad(format!("bad layer count `{count}`")))?;

    let mut vector = |key: &str, channels: usize| -> Result<Vec<S>, StatsError> {
        let line = lines.next().ok_or_else(|| bad(format!("missing `{key}` line")))?;
        let mut toks = line.split_whitespace();
        if toks.next() != Some(key) {
            return Err(bad(format!("expected `{key}` line, got `{line}`")));
        }
        let vals: Vec<S> = toks
            .map(|t| {
                t.parse::<f64>()
                    .map(S::from_f64_lossy)
                    .map_err(|_| bad(format!("bad real `{t}`")))
            })
            .collect::<Result<_, _>>()?;
        if vals.len() != channels {
            return Err(bad(format!("`{key}` has {} values, expected {channels}", vals.len())));
        }
        Ok(vals)
    };
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let line = vector("layer", 1).map_err(|_| bad("missing `layer` line".into()))?;
        let channels = line[0].to_f64_lossy() as usize;
        let mean = vector("mean", channels)?;
        let var = vector("var", channels)?;
        let g = LayerGaussian { mean, var };
        if !g.is_valid() {
            return Err(bad("negative or non-finite statistics".into()));
        }
        layers.push(g);
    }
    Ok(ClientStats { variant, layers })
}
