use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::engine::{simulate_scan, KlyshkoPath, ScanSettings};
use crate::exec::Execution;
use crate::fitting::{fit_scan_auto, slit_correction, slit_factor, FitOptions, FitResult};
use crate::model::laws::{effective_distance, visibility, Validity};
use crate::model::{ConfigLabel, Placement, VisibilityPoint};
use crate::turbulence::{derive_seed, SEED_RULE};
use crate::{Error, Result};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Samples of the visibility law along the sweep.
const CURVE_SAMPLES: usize = 101;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignPoint {
    pub index: usize,
    pub placement: Placement,
    pub effective_distance_mm: f64,
    /// Seed of the Poisson counts.
    pub scan_seed: u64,
    /// Master seed of the Monte Carlo kernel, when one is used.
    pub kernel_seed: u64,
    pub model_visibility: f64,
    pub validity: Validity,
    /// Slit-corrected fitted visibility.
    pub fitted: Option<VisibilityPoint>,
    pub fit: Option<FitResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSample {
    /// Sweep coordinate: `l₁` for crystal-side, distance from the object
    /// for object-side placements.
    pub position_mm: f64,
    pub effective_distance_mm: f64,
    pub visibility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeInfo {
    pub crate_version: String,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub schema_version: u32,
    pub config_name: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub seed_rule: String,
    pub points: Vec<CampaignPoint>,
    pub model_curve: Vec<CurveSample>,
    pub runtime: RuntimeInfo,
}

impl CampaignReport {
    pub fn failures(&self) -> usize {
        self.points.iter().filter(|p| p.error.is_some()).count()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Fitted points, ready for [`crate::fitting::fit_alpha`].
    pub fn visibility_points(&self) -> Vec<VisibilityPoint> {
        self.points
            .iter()
            .filter_map(|p| p.fitted.clone())
            .collect()
    }

    /// One row per sweep point: `index,configuration,side,d_mm,V,sigma_V,V_model,scan_seed,error`.
    /// Failed points leave `V` and `sigma_V` empty.
    pub fn write_points_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "index",
            "configuration",
            "side",
            "d_mm",
            "V",
            "sigma_V",
            "V_model",
            "scan_seed",
            "error",
        ])?;
        for p in &self.points {
            let side = match p.placement.side() {
                crate::model::Side::CrystalSide => "crystal_side",
                crate::model::Side::ObjectSide => "object_side",
            };
            let (v, s) = p
                .fitted
                .as_ref()
                .map_or((String::new(), String::new()), |f| {
                    (f.visibility.to_string(), f.sigma.to_string())
                });
            w.write_record([
                p.index.to_string(),
                self.config_name.clone(),
                side.to_string(),
                p.effective_distance_mm.to_string(),
                v,
                s,
                p.model_visibility.to_string(),
                p.scan_seed.to_string(),
                p.error.clone().unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads visibility points from CSV with columns `d_mm`, `V`, `sigma_V`
/// and optionally `configuration` and `side`. Rows with an empty `V` are
/// skipped; a missing `configuration` column takes `default_config`.
pub fn read_visibility_csv<R: Read>(
    input: R,
    origin: &Path,
    default_config: &str,
) -> Result<Vec<VisibilityPoint>> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = r.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let need = |name: &str| {
        col(name).ok_or_else(|| Error::MissingColumn {
            path: origin.into(),
            column: name.to_string(),
        })
    };
    let (id, iv, is) = (need("d_mm")?, need("V")?, need("sigma_V")?);
    let (ic, iside) = (col("configuration"), col("side"));
    let mut points = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        if field(iv).is_empty() {
            continue;
        }
        let num = |i: usize| {
            field(i).parse::<f64>().map_err(|_| Error::MalformedRow {
                path: origin.into(),
                row: row + 1,
                message: format!("`{}` is not a number", field(i)),
            })
        };
        let side = match iside.map(field) {
            Some("object_side") => crate::model::Side::ObjectSide,
            _ => crate::model::Side::CrystalSide,
        };
        let configuration = ic
            .map(field)
            .filter(|c| !c.is_empty())
            .unwrap_or(default_config)
            .to_string();
        points.push(VisibilityPoint::new(
            num(id)?,
            num(iv)?,
            num(is)?,
            ConfigLabel {
                configuration,
                side,
            },
        )?);
    }
    Ok(points)
}

fn label(cfg: &ExperimentConfig, placement: &Placement) -> ConfigLabel {
    ConfigLabel {
        configuration: cfg.name.clone(),
        side: placement.side(),
    }
}

/// Seeds of sweep point `index`: counts and kernel.
pub fn point_seeds(master: u64, index: usize) -> (u64, u64) {
    (
        derive_seed(master, 2 * index as u64),
        derive_seed(master, 2 * index as u64 + 1),
    )
}

fn run_point(cfg: &ExperimentConfig, index: usize) -> Result<CampaignPoint> {
    let optics = cfg.optics()?;
    let spec = cfg.sweep_specs()?[index];
    let pattern = cfg.pattern()?;
    let d = effective_distance(&spec, &optics)?;
    let k = optics.wavenumber();
    let model = visibility(
        optics.system_visibility(),
        spec.alpha_per_mm2,
        d,
        k,
        pattern.fringe_wavenumber,
    )? * pattern.intrinsic_visibility;
    let validity = Validity::assess(
        d,
        spec.alpha_per_mm2,
        k,
        pattern.envelope_width_mm,
        cfg.engine.validity_threshold,
    );
    let (scan_seed, kernel_seed) = point_seeds(cfg.engine.master_seed, index);
    let mut point = CampaignPoint {
        index,
        placement: spec.placement,
        effective_distance_mm: d,
        scan_seed,
        kernel_seed,
        model_visibility: model,
        validity,
        fitted: None,
        fit: None,
        error: None,
    };

    let outcome = (|| -> Result<(VisibilityPoint, FitResult)> {
        let path = KlyshkoPath::new(&optics, &spec)?;
        let settings = ScanSettings {
            kernel: cfg.kernel_source(kernel_seed),
            seed: scan_seed,
            noiseless: cfg.engine.noiseless,
        };
        let scan = simulate_scan(
            &path,
            spec.alpha_per_mm2,
            &pattern,
            &cfg.detector,
            &settings,
        )?;
        let fit = fit_scan_auto(
            &scan,
            &FitOptions::with_fixed_background(cfg.detector.background_cps),
        )?;
        let model_fit = fit.usable()?;
        let k0 = model_fit.fringe_wavenumber;
        let s = cfg.detector.slit_width_mm;
        let v = slit_correction(model_fit.visibility, k0, s)?.min(1.0);
        let sigma = fit.errors.as_ref().map_or(f64::INFINITY, |e| {
            e.visibility / slit_factor(k0, s).unwrap_or(1.0)
        });
        Ok((
            VisibilityPoint::new(d, v, sigma, label(cfg, &spec.placement))?,
            fit,
        ))
    })();
    match outcome {
        Ok((v, fit)) => {
            point.fitted = Some(v);
            point.fit = Some(fit);
        }
        Err(e) => point.error = Some(e.to_string()),
    }
    Ok(point)
}

/// Visibility law sampled across the sweep's span, per placement side.
pub fn model_curve(cfg: &ExperimentConfig) -> Result<Vec<CurveSample>> {
    let optics = cfg.optics()?;
    let pattern = cfg.pattern()?;
    let specs = cfg.sweep_specs()?;
    let mut out = Vec::new();
    for side_spec in [
        specs
            .iter()
            .find(|s| matches!(s.placement, Placement::CrystalSide { .. })),
        specs
            .iter()
            .find(|s| matches!(s.placement, Placement::ObjectSide { .. })),
    ]
    .into_iter()
    .flatten()
    {
        let coord = |p: &Placement| match *p {
            Placement::CrystalSide { l1_mm } => l1_mm,
            Placement::ObjectSide {
                distance_from_object_mm,
            } => distance_from_object_mm,
        };
        let same_side: Vec<f64> = specs
            .iter()
            .filter(|s| s.placement.side() == side_spec.placement.side())
            .map(|s| coord(&s.placement))
            .collect();
        let lo = same_side.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = same_side.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for i in 0..CURVE_SAMPLES {
            let x = if hi > lo {
                lo + (hi - lo) * i as f64 / (CURVE_SAMPLES - 1) as f64
            } else {
                lo
            };
            let placement = match side_spec.placement {
                Placement::CrystalSide { .. } => Placement::CrystalSide { l1_mm: x },
                Placement::ObjectSide { .. } => Placement::ObjectSide {
                    distance_from_object_mm: x,
                },
            };
            let spec = crate::model::TurbulenceSpec {
                placement,
                ..*side_spec
            };
            let d = effective_distance(&spec, &optics)?;
            let v = visibility(
                optics.system_visibility(),
                spec.alpha_per_mm2,
                d,
                optics.wavenumber(),
                pattern.fringe_wavenumber,
            )? * pattern.intrinsic_visibility;
            out.push(CurveSample {
                position_mm: x,
                effective_distance_mm: d,
                visibility: v,
            });
            if hi == lo {
                break;
            }
        }
    }
    Ok(out)
}

/// Simulates, fits and reports every sweep point. Points run concurrently
/// under `exec`; the report is ordered by sweep index. A failing point is
/// recorded in its entry and the campaign continues.
pub fn run_campaign(cfg: &ExperimentConfig, exec: Execution) -> Result<CampaignReport> {
    let start = Instant::now();
    cfg.validate()?;
    let points = exec.map(cfg.turbulence.sweep.len(), |i| run_point(cfg, i));
    let points = points.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(CampaignReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config_name: cfg.name.clone(),
        config_hash: cfg.hash(),
        master_seed: cfg.engine.master_seed,
        seed_rule: SEED_RULE.to_string(),
        points,
        model_curve: model_curve(cfg)?,
        runtime: RuntimeInfo {
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            elapsed_s: start.elapsed().as_secs_f64(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::Bundled;

    #[test]
    fn empty_sweep_is_an_empty_success() {
        let mut cfg = Bundled::PaperUnshifted.load();
        cfg.turbulence.sweep.clear();
        let r = run_campaign(&cfg, Execution::Sequential).unwrap();
        assert!(r.points.is_empty());
        assert!(r.model_curve.is_empty());
        assert_eq!(r.failures(), 0);
    }

    #[test]
    fn model_ratio_at_482() {
        let mut u = Bundled::PaperUnshifted.load();
        let mut s = Bundled::PaperShifted.load();
        for c in [&mut u, &mut s] {
            c.turbulence.sweep = vec![Placement::CrystalSide { l1_mm: 482.0 }];
            c.engine.noiseless = true;
        }
        let ru = run_campaign(&u, Execution::Sequential).unwrap();
        let rs = run_campaign(&s, Execution::Sequential).unwrap();
        let ratio = rs.points[0].model_visibility / ru.points[0].model_visibility;
        assert!((ratio - 2.0438).abs() < 1e-3, "{ratio}");
    }

    #[test]
    fn failures_are_recorded_per_point() {
        let mut cfg = Bundled::PaperShifted.load();
        // A detector scan far from the object sees no counts.
        cfg.detector.center_mm = 50.0;
        cfg.turbulence.sweep.truncate(2);
        let r = run_campaign(&cfg, Execution::Sequential).unwrap();
        assert_eq!(r.points.len(), 2);
        assert_eq!(r.failures(), 2);
        assert!(r
            .points
            .iter()
            .all(|p| p.fitted.is_none() && p.model_visibility > 0.0));
    }

    #[test]
    fn points_csv_reads_back() {
        let mut cfg = Bundled::PaperShifted.load();
        cfg.turbulence.sweep.truncate(3);
        let r = run_campaign(&cfg, Execution::Sequential).unwrap();
        let mut buf = Vec::new();
        r.write_points_csv(&mut buf).unwrap();
        let back = read_visibility_csv(buf.as_slice(), Path::new("p.csv"), "x").unwrap();
        assert_eq!(back, r.visibility_points());
    }
}
