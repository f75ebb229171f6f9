//! Parsers for the compound flag values (lists, ranges, ratios).

use cspm_core::phase_motion::LagSet;
use cspm_core::signal::{Modulation, SplitRatios};

use crate::error::{CliError, Result};

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| usage(format!("invalid {what} '{}' in '{s}'", p.trim())))
        })
        .collect()
}

/// `all` or a comma-separated list of modulation names.
pub fn classes(s: &str) -> Result<Vec<Modulation>> {
    if s.trim().eq_ignore_ascii_case("all") {
        return Ok(Modulation::ALL.to_vec());
    }
    let mut out = Vec::new();
    for name in s.split(',') {
        let m: Modulation = name
            .parse()
            .map_err(|_| usage(format!("unknown modulation '{}'", name.trim())))?;
        if out.contains(&m) {
            return Err(usage(format!("modulation {m} listed twice")));
        }
        out.push(m);
    }
    Ok(out)
}

/// `start:step:stop` with an inclusive stop, or a comma-separated list.
pub fn snr_grid(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let grid = match parts.as_slice() {
        [start, step, stop] => {
            let v: Vec<f64> = list(&format!("{start},{step},{stop}"), "SNR range value")?;
            let (start, step, stop) = (v[0], v[1], v[2]);
            if !(step > 0.0) || stop < start {
                return Err(usage(format!(
                    "SNR range '{s}' needs a positive step and start <= stop"
                )));
            }
            let n = ((stop - start) / step + 1e-9).floor() as usize;
            (0..=n).map(|k| start + k as f64 * step).collect()
        }
        [single] => list(single, "SNR")?,
        _ => return Err(usage(format!("SNR grid '{s}' is neither start:step:stop nor a list"))),
    };
    if grid.iter().any(|v: &f64| !v.is_finite()) {
        return Err(usage(format!("SNR grid '{s}' has non-finite values")));
    }
    Ok(grid)
}

pub fn lags(s: &str) -> Result<LagSet> {
    LagSet::new(list(s, "lag")?).map_err(|e| usage(e.to_string()))
}

pub fn split(s: &str) -> Result<SplitRatios> {
    match list::<f64>(s, "split fraction")?.as_slice() {
        &[train, val, test] => {
            let r = SplitRatios { train, val, test };
            r.validate().map_err(|e| usage(e.to_string()))?;
            Ok(r)
        }
        _ => Err(usage(format!("split '{s}' needs three fractions"))),
    }
}

pub fn seeds(s: &str) -> Result<Vec<u64>> {
    let v: Vec<u64> = list(s, "seed")?;
    if v.is_empty() {
        return Err(usage("at least one seed is required"));
    }
    Ok(v)
}
