//! One experiment per parameter value, aggregated into long-format CSV.

use std::path::Path;

use ipsim_core::rng::split;

use crate::error::CliError;
use crate::run::{compute, write_bundle, Bundle};
use crate::spec::{parse_scalar, set_path, ExperimentSpec};

/// Runs `template` once per value of `parameter` (a dotted path), with run
/// `k` seeded by `split(seed, k)`. Each output file `f` of the runs becomes
/// `sweep_f` with leading `parameter,value` columns.
pub fn sweep(template: &toml::Value, parameter: &str, values: &[String]) -> Result<Bundle, CliError> {
    if values.is_empty() {
        return Err(CliError::spec("sweep needs at least one value"));
    }
    let base = ExperimentSpec::from_value(template.clone())?;
    let mut out = Bundle::default();
    for (k, raw) in values.iter().enumerate() {
        let mut v = template.clone();
        set_path(&mut v, parameter, parse_scalar(raw))?;
        let mut spec = ExperimentSpec::from_value(v)?;
        spec.seed = split(base.seed, k as u64);
        let run = compute(&spec)?;
        for (name, text) in run.files {
            let mut lines = text.lines();
            let header = lines.next().unwrap_or("");
            let agg = out.files.entry(format!("sweep_{name}")).or_insert_with(|| format!("parameter,value,{header}\n"));
            for line in lines {
                agg.push_str(&format!("{parameter},{raw},{line}\n"));
            }
        }
        for (q, f) in run.truncation {
            out.truncation.insert(format!("{q}[{raw}]"), f);
        }
    }
    Ok(out)
}

pub fn run_sweep(
    template: &toml::Value,
    parameter: &str,
    values: &[String],
    out: &Path,
    threads: usize,
) -> Result<Bundle, CliError> {
    let pool =
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| CliError::Run(e.to_string()))?;
    let bundle = pool.install(|| sweep(template, parameter, values))?;
    write_bundle(&bundle, out)?;
    Ok(bundle)
}
