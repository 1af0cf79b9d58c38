use std::fs::File;

use mlspde_core::chain::{autocorrelation, iact_with, read_series_csv, sample_mean, sample_variance};

use crate::config::ExperimentConfig;
use crate::error::{LabError, Result};
use crate::manifest::Outputs;
use crate::report::{Check, Report};

/// IACT of one column of a chain CSV, with the autocorrelations up to the
/// selected window.
pub fn run_iact(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<Report> {
    let s = &cfg.iact;
    let path = s.input.as_ref().ok_or_else(|| LabError::Config("iact.input is required".into()))?;
    let file = File::open(path).map_err(|e| LabError::io(path, e))?;
    let series = read_series_csv(file, &s.column)?;
    if s.burn_in >= series.len() {
        return Err(LabError::Config(format!("iact.burn_in {} leaves nothing of {} values", s.burn_in, series.len())));
    }
    let x = &series[s.burn_in..];
    let est = iact_with(x, s.window_c)?;
    out.write_csv("acf.csv", |w| {
        w.write_record(["lag", "rho"])?;
        for lag in 0..=est.window {
            let r = autocorrelation(x, lag).expect("lag below the window");
            w.write_record([lag.to_string(), format!("{r:.16e}")])?;
        }
        Ok(())
    })?;
    out.write_json("iact.json", &est)?;
    let mut report = Report::new(cfg.kind.name());
    report.metric("column", s.column.clone());
    report.metric("len", x.len());
    report.metric("mean", sample_mean(x));
    report.metric("variance", sample_variance(x)?);
    report.metric("tau", est.tau);
    report.metric("window", est.window);
    report.metric("rate", est.rate());
    report.check(Check::new("window found", true, format!("M={} tau={:.4}", est.window, est.tau)));
    Ok(report)
}
