use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::artifacts::EvalResult;
use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};

/// Collects evaluation results into the final CSV table plus a JSON file
/// with one PR-curve series per method. Files are written atomically.
pub fn cmd_report(config: &PipelineConfig, methods: &[String]) -> CliResult<(PathBuf, PathBuf)> {
    let reports = config.reports_dir();
    let mut results = Vec::new();
    for method in methods {
        let path = reports.join(format!("{method}.eval.json"));
        if !path.exists() {
            return Err(CliError::MissingInput(format!(
                "evaluation result {} not found; run `fishy evaluate` first",
                path.display()
            )));
        }
        results.push(EvalResult::load(&path)?);
    }

    let mut csv = String::from("method,dataset,AP,FPR@95TPR,maxJ,PAvPU@t*,mIoU\n");
    for r in &results {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        csv.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{},{}\n",
            r.method,
            r.dataset,
            r.ap,
            r.fpr_at_tpr,
            r.max_j,
            opt(r.pavpu),
            opt(r.miou),
        ));
    }
    let csv_path = reports.join("report.csv");
    let tmp = reports.join("report.csv.tmp");
    std::fs::create_dir_all(&reports).map_err(fishy_core::Error::from)?;
    std::fs::write(&tmp, csv.as_bytes()).map_err(fishy_core::Error::from)?;
    std::fs::rename(&tmp, &csv_path).map_err(fishy_core::Error::from)?;

    let curves: BTreeMap<String, &fishy_core::metrics::PrCurve> =
        results.iter().map(|r| (r.method.clone(), &r.pr_curve)).collect();
    let json_path = reports.join("pr_curves.json");
    let tmp = reports.join("pr_curves.json.tmp");
    std::fs::write(&tmp, serde_json::to_vec_pretty(&curves).expect("curves serialize"))
        .map_err(fishy_core::Error::from)?;
    std::fs::rename(&tmp, &json_path).map_err(fishy_core::Error::from)?;

    println!("wrote {} and {}", csv_path.display(), json_path.display());
    Ok((csv_path, json_path))
}
