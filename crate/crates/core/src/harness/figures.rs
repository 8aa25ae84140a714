//! Figure data as CSV. Output depends only on the bundled configs and the
//! fixed seeds below, so regenerated files are byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::config::{Bundled, ExperimentConfig};
use crate::engine::{simulate_scan, KlyshkoPath, ScanSettings};
use crate::model::laws::{crossover_l1, effective_distance, visibility};
use crate::model::{Placement, TurbulenceSpec};
use crate::turbulence::derive_seed;
use crate::{Error, Result};

/// Sweep coordinate range shared by both curve figures.
const CURVE_MAX_MM: f64 = 500.0;
const CURVE_STEP_MM: f64 = 2.0;

/// Turbulence positions of the representative scans.
const SCAN_PLACEMENTS: [(&str, Placement); 3] = [
    ("crystal_432", Placement::CrystalSide { l1_mm: 432.0 }),
    (
        "object_203",
        Placement::ObjectSide {
            distance_from_object_mm: 203.0,
        },
    ),
    (
        "object_229",
        Placement::ObjectSide {
            distance_from_object_mm: 229.0,
        },
    ),
];

/// Seed stream index of the representative scans, kept clear of the
/// campaign indices.
const SCAN_SEED_BASE: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Figure {
    /// Representative synthetic scans.
    Fig3,
    /// Visibility against object-side distance.
    Fig4,
    /// Visibility against crystal-side distance.
    Fig5,
}

impl Figure {
    pub const ALL: [Figure; 3] = [Figure::Fig3, Figure::Fig4, Figure::Fig5];

    pub fn name(self) -> &'static str {
        match self {
            Figure::Fig3 => "fig3",
            Figure::Fig4 => "fig4",
            Figure::Fig5 => "fig5",
        }
    }
}

impl FromStr for Figure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Figure::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown figure `{s}` (expected fig3, fig4 or fig5)"
                ))
            })
    }
}

fn configs() -> [ExperimentConfig; 2] {
    [Bundled::PaperUnshifted.load(), Bundled::PaperShifted.load()]
}

fn model_at(cfg: &ExperimentConfig, placement: Placement) -> Result<(f64, f64)> {
    let optics = cfg.optics()?;
    let pattern = cfg.pattern()?;
    let spec = TurbulenceSpec::new(
        cfg.turbulence.alpha_per_mm2,
        cfg.turbulence.exponent,
        placement,
    )?;
    let d = effective_distance(&spec, &optics)?;
    let v = visibility(
        optics.system_visibility(),
        spec.alpha_per_mm2,
        d,
        optics.wavenumber(),
        pattern.fringe_wavenumber,
    )? * pattern.intrinsic_visibility;
    Ok((d, v))
}

fn curve_positions() -> impl Iterator<Item = f64> {
    let n = (CURVE_MAX_MM / CURVE_STEP_MM).round() as usize;
    (0..=n).map(|i| i as f64 * CURVE_STEP_MM)
}

/// `l1_mm,d_unshifted_mm,V_unshifted,d_shifted_mm,V_shifted`.
pub fn fig5_curves() -> Result<String> {
    let [u, s] = configs();
    let mut out = String::from("l1_mm,d_unshifted_mm,V_unshifted,d_shifted_mm,V_shifted\n");
    for l1 in curve_positions() {
        let p = Placement::CrystalSide { l1_mm: l1 };
        let (du, vu) = model_at(&u, p)?;
        let (ds, vs) = model_at(&s, p)?;
        writeln!(out, "{l1},{du},{vu},{ds},{vs}").unwrap();
    }
    Ok(out)
}

/// Central image plane and the crossing of the two curves.
pub fn fig5_markers() -> Result<String> {
    let [u, s] = configs();
    let optics = s.optics()?;
    let crossing = crossover_l1(
        u.optics.system_visibility,
        s.optics.system_visibility,
        s.optics.shift_mm,
        s.turbulence.alpha_per_mm2,
        optics.wavenumber(),
        s.pattern()?.fringe_wavenumber,
    )
    .ok_or_else(|| Error::domain("the bundled curves do not cross"))?;
    Ok(format!(
        "marker,l1_mm\ncentral_image_plane,{}\ncrossing,{crossing}\n",
        s.optics.shift_mm
    ))
}

/// `distance_from_object_mm,V_unshifted,V_shifted`.
pub fn fig4_curves() -> Result<String> {
    let [u, s] = configs();
    let mut out = String::from("distance_from_object_mm,V_unshifted,V_shifted\n");
    for x in curve_positions() {
        let p = Placement::ObjectSide {
            distance_from_object_mm: x,
        };
        let (_, vu) = model_at(&u, p)?;
        let (_, vs) = model_at(&s, p)?;
        writeln!(out, "{x},{vu},{vs}").unwrap();
    }
    Ok(out)
}

/// Representative scans, one per configuration and turbulence position,
/// as `(file stem, csv)`.
pub fn fig3_scans() -> Result<Vec<(String, String)>> {
    let mut files = Vec::new();
    for cfg in configs() {
        let optics = cfg.optics()?;
        let pattern = cfg.pattern()?;
        for (j, (tag, placement)) in SCAN_PLACEMENTS.iter().enumerate() {
            let spec = TurbulenceSpec::new(
                cfg.turbulence.alpha_per_mm2,
                cfg.turbulence.exponent,
                *placement,
            )?;
            let path = KlyshkoPath::new(&optics, &spec)?;
            let seed = derive_seed(cfg.engine.master_seed, SCAN_SEED_BASE + j as u64);
            let scan = simulate_scan(
                &path,
                spec.alpha_per_mm2,
                &pattern,
                &cfg.detector,
                &ScanSettings::analytic(seed),
            )?;
            let (_, v) = model_at(&cfg, *placement)?;
            let rate = format!(
                "synthetic counts: peak rate {} cps and background {} cps are invented defaults, not measured values",
                cfg.detector.peak_rate_cps, cfg.detector.background_cps
            );
            let model = format!("config {}, {placement:?}, model visibility {v}", cfg.name);
            files.push((
                format!("{}_{tag}", cfg.name),
                scan.to_csv_string(&[&rate, &model])?,
            ));
        }
    }
    Ok(files)
}

/// Writes the CSVs of `which` into `out_dir`, creating it if needed, and
/// returns the written paths.
pub fn reproduce_figure(which: Figure, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let files: Vec<(String, String)> = match which {
        Figure::Fig5 => vec![
            ("fig5_curves".into(), fig5_curves()?),
            ("fig5_markers".into(), fig5_markers()?),
        ],
        Figure::Fig4 => vec![("fig4_curves".into(), fig4_curves()?)],
        Figure::Fig3 => fig3_scans()?
            .into_iter()
            .map(|(stem, csv)| (format!("fig3_{stem}"), csv))
            .collect(),
    };
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::with_capacity(files.len());
    for (stem, text) in files {
        let path = out_dir.join(format!("{stem}.csv"));
        fs::write(&path, text)?;
        written.push(path);
    }
    Ok(written)
}
