use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::image::GhostImage;
use super::monte_carlo::{monte_carlo_g2, MonteCarloSettings};
use super::path::KlyshkoPath;
use crate::exec::Execution;
use crate::model::{CoherenceKernel, ObjectPattern};
use crate::{Error, Result};

/// Nodes of the composite Simpson rule averaging the image over the slit.
const SLIT_NODES: usize = 33;

/// Scanning-slit coincidence detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorModel {
    pub slit_width_mm: f64,
    pub step_mm: f64,
    pub positions: usize,
    pub center_mm: f64,
    pub dwell_s: f64,
    pub peak_rate_cps: f64,
    pub background_cps: f64,
}

impl Default for DetectorModel {
    fn default() -> Self {
        Self::paper_unshifted()
    }
}

impl DetectorModel {
    /// 40 µm slit stepped 5 µm over 160 positions, 4 s per position.
    pub fn paper(peak_rate_cps: f64) -> Self {
        DetectorModel {
            slit_width_mm: 0.040,
            step_mm: 0.005,
            positions: 160,
            center_mm: 0.0,
            dwell_s: 4.0,
            peak_rate_cps,
            background_cps: 0.0,
        }
    }

    /// Invented default peak rate of the unshifted apparatus.
    pub fn paper_unshifted() -> Self {
        Self::paper(200.0)
    }

    /// Invented default peak rate of the shifted apparatus.
    pub fn paper_shifted() -> Self {
        Self::paper(50.0)
    }

    /// A zero slit width is accepted as the point-detector idealization;
    /// otherwise the step may not exceed the slit.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("step_mm", self.step_mm),
            ("dwell_s", self.dwell_s),
            ("peak_rate_cps", self.peak_rate_cps),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::domain(format!(
                    "detector {name} must be positive, got {v}"
                )));
            }
        }
        if !(self.slit_width_mm >= 0.0) || !(self.background_cps >= 0.0) {
            return Err(Error::domain(
                "detector slit width and background must be >= 0",
            ));
        }
        if self.slit_width_mm > 0.0 && self.step_mm > self.slit_width_mm {
            return Err(Error::domain(format!(
                "slit step {} mm exceeds slit width {} mm",
                self.step_mm, self.slit_width_mm
            )));
        }
        if self.positions < 2 {
            return Err(Error::domain("a scan needs at least 2 positions"));
        }
        Ok(())
    }

    /// `center + (j − (n − 1)/2)·step`.
    pub fn positions_mm(&self) -> Vec<f64> {
        let mid = (self.positions - 1) as f64 / 2.0;
        (0..self.positions)
            .map(|j| self.center_mm + (j as f64 - mid) * self.step_mm)
            .collect()
    }
}

/// Where a scan's numbers came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Provenance {
    Synthetic { seed: u64, noiseless: bool },
    File { path: String },
}

/// One coincidence scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanData {
    pub positions_mm: Vec<f64>,
    pub counts: Vec<u64>,
    pub durations_s: Vec<f64>,
    pub provenance: Provenance,
}

const HEADER: [&str; 3] = ["position_mm", "counts", "duration_s"];
const PROVENANCE_TAG: &str = "# provenance: ";

impl ScanData {
    pub fn new(
        positions_mm: Vec<f64>,
        counts: Vec<u64>,
        durations_s: Vec<f64>,
        provenance: Provenance,
    ) -> Result<Self> {
        if positions_mm.len() != counts.len() || counts.len() != durations_s.len() {
            return Err(Error::domain("scan columns differ in length"));
        }
        if positions_mm.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::domain("scan positions must be strictly increasing"));
        }
        if durations_s.iter().any(|&t| !(t > 0.0)) {
            return Err(Error::domain("scan durations must be positive"));
        }
        Ok(ScanData {
            positions_mm,
            counts,
            durations_s,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Counts per second.
    pub fn rates(&self) -> Vec<f64> {
        self.counts
            .iter()
            .zip(&self.durations_s)
            .map(|(&c, &t)| c as f64 / t)
            .collect()
    }

    /// Poisson standard error of each rate, `√max(counts, 1)/duration`.
    pub fn rate_errors(&self) -> Vec<f64> {
        self.counts
            .iter()
            .zip(&self.durations_s)
            .map(|(&c, &t)| (c.max(1) as f64).sqrt() / t)
            .collect()
    }

    /// CSV with a provenance comment, any extra `notes` as further comment
    /// lines, then `position_mm,counts,duration_s` rows. Floats are written
    /// in shortest round-trip form.
    pub fn write_csv<W: Write>(&self, mut out: W, notes: &[&str]) -> Result<()> {
        let mut head = String::new();
        writeln!(
            head,
            "{PROVENANCE_TAG}{}",
            serde_json::to_string(&self.provenance)?
        )
        .expect("string write");
        for note in notes {
            writeln!(head, "# {note}").expect("string write");
        }
        out.write_all(head.as_bytes())?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(HEADER)?;
        for i in 0..self.len() {
            w.write_record([
                self.positions_mm[i].to_string(),
                self.counts[i].to_string(),
                self.durations_s[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self, notes: &[&str]) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, notes)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    /// Parses scan CSV text; `origin` names the source in errors and in the
    /// provenance of files that carry none.
    pub fn from_csv_str(text: &str, origin: &Path) -> Result<Self> {
        let mut provenance = Provenance::File {
            path: origin.display().to_string(),
        };
        let mut body = String::with_capacity(text.len());
        for line in text.lines() {
            if let Some(json) = line.strip_prefix(PROVENANCE_TAG) {
                provenance = serde_json::from_str(json)?;
            } else if !line.starts_with('#') {
                body.push_str(line);
                body.push('\n');
            }
        }

        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(body.as_bytes());
        let headers = reader.headers()?.clone();
        let column = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn {
                    path: origin.to_path_buf(),
                    column: name.to_string(),
                })
        };
        let (ip, ic, id) = (column(HEADER[0])?, column(HEADER[1])?, column(HEADER[2])?);

        let (mut positions, mut counts, mut durations) = (vec![], vec![], vec![]);
        for (i, rec) in reader.records().enumerate() {
            let row = i + 1;
            let rec = rec?;
            let malformed = |message: String| Error::MalformedRow {
                path: origin.to_path_buf(),
                row,
                message,
            };
            if rec.len() != headers.len() {
                return Err(malformed(format!(
                    "expected {} fields, found {}",
                    headers.len(),
                    rec.len()
                )));
            }
            let x: f64 = rec[ip]
                .parse()
                .map_err(|_| malformed(format!("position `{}` is not a number", &rec[ip])))?;
            let c: u64 = rec[ic].parse().map_err(|_| Error::NonIntegerCounts {
                path: origin.to_path_buf(),
                row,
                value: rec[ic].to_string(),
            })?;
            let t: f64 = rec[id]
                .parse()
                .map_err(|_| malformed(format!("duration `{}` is not a number", &rec[id])))?;
            if !(t > 0.0) {
                return Err(malformed(format!("duration {t} s is not positive")));
            }
            if !x.is_finite() {
                return Err(malformed(format!("position {x} is not finite")));
            }
            if positions.last().is_some_and(|&last| !(x > last)) {
                return Err(Error::NonMonotonePositions {
                    path: origin.to_path_buf(),
                    row,
                });
            }
            positions.push(x);
            counts.push(c);
            durations.push(t);
        }
        Ok(ScanData {
            positions_mm: positions,
            counts,
            durations_s: durations,
            provenance,
        })
    }
}

/// Reads and validates a scan CSV file.
pub fn ingest_scan_csv(path: &Path) -> Result<ScanData> {
    let text = std::fs::read_to_string(path)?;
    ScanData::from_csv_str(&text, path)
}

/// Kernel a scan is synthesized through.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum KernelSource {
    Analytic,
    MonteCarlo {
        realizations: usize,
        master_seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanSettings {
    pub kernel: KernelSource,
    /// Poisson seed for the counts.
    pub seed: u64,
    /// Report rounded expected counts instead of Poisson draws.
    pub noiseless: bool,
}

impl ScanSettings {
    pub fn analytic(seed: u64) -> Self {
        ScanSettings {
            kernel: KernelSource::Analytic,
            seed,
            noiseless: false,
        }
    }
}

/// G² for `alpha` along `path`, from the requested source.
pub fn coherence_kernel(
    path: &KlyshkoPath,
    alpha: f64,
    source: KernelSource,
) -> Result<CoherenceKernel> {
    match source {
        KernelSource::Analytic => Ok(CoherenceKernel::analytic(
            alpha,
            path.detection_distance_mm,
            path.wavenumber,
        )),
        KernelSource::MonteCarlo {
            realizations,
            master_seed,
        } => {
            let mc = MonteCarloSettings::new(realizations, master_seed);
            monte_carlo_g2(path, alpha, &mc, Execution::Sequential)
        }
    }
}

/// Expected coincidence rate at each slit position: background plus peak
/// rate times the slit-averaged ghost image (whose fringe-free envelope
/// peaks at 1).
pub fn expected_rates(image: &GhostImage, detector: &DetectorModel) -> Vec<f64> {
    let s = detector.slit_width_mm;
    detector
        .positions_mm()
        .iter()
        .map(|&x| {
            let mean = if s == 0.0 {
                image.value(x)
            } else {
                let m = SLIT_NODES - 1;
                let h = s / m as f64;
                let mut acc = 0.0;
                for i in 0..=m {
                    let w = if i == 0 || i == m {
                        1.0
                    } else if i % 2 == 1 {
                        4.0
                    } else {
                        2.0
                    };
                    acc += w * image.value(x - s / 2.0 + i as f64 * h);
                }
                acc * h / 3.0 / s
            };
            detector.background_cps + detector.peak_rate_cps * mean
        })
        .collect()
}

/// Synthetic scan of `pattern` through turbulence `alpha` on `path`.
/// Single-threaded; independent scans may run concurrently.
pub fn simulate_scan(
    path: &KlyshkoPath,
    alpha: f64,
    pattern: &ObjectPattern,
    detector: &DetectorModel,
    settings: &ScanSettings,
) -> Result<ScanData> {
    detector.validate()?;
    let kernel = coherence_kernel(path, alpha, settings.kernel)?;
    let image = GhostImage::new(&kernel, pattern, path.system_visibility)?;
    let rates = expected_rates(&image, detector);
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let counts = rates
        .iter()
        .map(|&r| {
            let mean = r * detector.dwell_s;
            if settings.noiseless {
                Ok(mean.round() as u64)
            } else if mean == 0.0 {
                Ok(0)
            } else {
                let draw: f64 = Poisson::new(mean)
                    .map_err(|e| Error::domain(format!("poisson mean {mean}: {e}")))?
                    .sample(&mut rng);
                Ok(draw as u64)
            }
        })
        .collect::<Result<Vec<u64>>>()?;
    ScanData::new(
        detector.positions_mm(),
        counts,
        vec![detector.dwell_s; detector.positions],
        Provenance::Synthetic {
            seed: settings.seed,
            noiseless: settings.noiseless,
        },
    )
}
