//! End-to-end closure: simulate a scan, fit it, undo the slit, compare with
//! the visibility law.

use ghostimg::engine::{simulate_scan, DetectorModel, KlyshkoPath, ScanSettings};
use ghostimg::fitting::{fit_scan_auto, slit_correction, FitOptions};
use ghostimg::model::laws::{effective_distance, kernel_sigma, validity_ratio, visibility};
use ghostimg::model::{ObjectPattern, OpticsConfig, Placement, TurbulenceSpec};

/// Visibility of a Gaussian-enveloped sinusoid of width `w` blurred by a
/// Gaussian of width `sigma`, as seen by a fit that frees the envelope.
fn finite_envelope_visibility(g: f64, k0: f64, w: f64, sigma: f64) -> f64 {
    let s2 = w * w + sigma * sigma;
    g * (-(k0 * k0) * sigma * sigma * w * w / (2.0 * s2)).exp()
}

fn grid() -> Vec<(OpticsConfig, f64, Placement)> {
    let mut out = Vec::new();
    for optics in [
        OpticsConfig::paper_unshifted(),
        OpticsConfig::paper_shifted(),
    ] {
        for alpha in [0.5, 2.0, 2.5] {
            for l1_mm in [380.0, 432.0, 482.0] {
                out.push((optics, alpha, Placement::CrystalSide { l1_mm }));
            }
            for distance_from_object_mm in [50.0, 152.0, 203.0, 229.0, 482.0] {
                out.push((
                    optics,
                    alpha,
                    Placement::ObjectSide {
                        distance_from_object_mm,
                    },
                ));
            }
        }
    }
    out
}

#[test]
fn noiseless_scans_close_on_the_visibility_law() {
    let pattern = ObjectPattern::paper_sinusoid();
    let w = pattern.envelope_width_mm;
    let k0 = pattern.fringe_wavenumber;
    for (optics, alpha, placement) in grid() {
        let spec = TurbulenceSpec::square_law(alpha, placement).unwrap();
        let d = effective_distance(&spec, &optics).unwrap();
        let k = optics.wavenumber();
        let path = KlyshkoPath::new(&optics, &spec).unwrap();
        let detector = DetectorModel::paper(200.0);
        let settings = ScanSettings {
            noiseless: true,
            ..ScanSettings::analytic(1)
        };
        let scan = simulate_scan(&path, alpha, &pattern, &detector, &settings).unwrap();
        let fit = fit_scan_auto(&scan, &FitOptions::with_fixed_background(0.0)).unwrap();
        let m = fit.usable().unwrap();
        let v = slit_correction(m.visibility, m.fringe_wavenumber, detector.slit_width_mm).unwrap();
        let se = fit.errors.unwrap().visibility;

        let g = optics.system_visibility();
        let exact = finite_envelope_visibility(g, k0, w, kernel_sigma(alpha, d, k));
        assert!(
            (v - exact).abs() < 2.0 * se,
            "{placement:?} alpha {alpha}: fit {v}, exact {exact}, se {se}"
        );
        if validity_ratio(d, alpha, k, w) < 0.1 {
            let law = visibility(g, alpha, d, k, k0).unwrap();
            assert!(
                (v - law).abs() < 2.0 * se,
                "{placement:?} alpha {alpha}: fit {v}, law {law}, se {se}"
            );
        }
    }
}

#[test]
fn noisy_scans_stay_within_two_standard_errors_of_the_exact_visibility() {
    let pattern = ObjectPattern::paper_sinusoid();
    let mut misses = 0;
    let mut total = 0;
    for (i, (optics, alpha, placement)) in grid().into_iter().enumerate() {
        let spec = TurbulenceSpec::square_law(alpha, placement).unwrap();
        let d = effective_distance(&spec, &optics).unwrap();
        let path = KlyshkoPath::new(&optics, &spec).unwrap();
        let detector = DetectorModel::paper(200.0);
        let scan = simulate_scan(
            &path,
            alpha,
            &pattern,
            &detector,
            &ScanSettings::analytic(i as u64),
        )
        .unwrap();
        let fit = fit_scan_auto(&scan, &FitOptions::with_fixed_background(0.0)).unwrap();
        let m = fit.usable().unwrap();
        let v = slit_correction(m.visibility, m.fringe_wavenumber, detector.slit_width_mm).unwrap();
        let se = fit.errors.unwrap().visibility;
        let exact = finite_envelope_visibility(
            optics.system_visibility(),
            pattern.fringe_wavenumber,
            pattern.envelope_width_mm,
            kernel_sigma(alpha, d, optics.wavenumber()),
        );
        total += 1;
        if (v - exact).abs() > 2.0 * se {
            misses += 1;
        }
    }
    // About 5% of points fall outside 2σ by chance.
    assert!(misses * 5 <= total, "{misses} of {total} points outside 2σ");
}
