//! Instance files, presets and atomic report output.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use mmlab::prob::{marginal_y, Channel, Coupling, Distribution, Metric};
use serde::{Deserialize, Serialize};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelFile {
    rows: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MetricFile {
    values: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CouplingFile {
    per_input: Vec<Vec<Vec<f64>>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DistributionFile {
    probs: Vec<f64>,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, what: &str) -> anyhow::Result<T> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("{}: cannot read {} file", path.display(), what))?;
    serde_json::from_str(&text).map_err(|e| anyhow!("{}: malformed {} file: {}", path.display(), what, e))
}

fn in_file<T>(path: &Path, r: mmlab::Result<T>) -> anyhow::Result<T> {
    r.map_err(|e| anyhow!("{}: {}", path.display(), e))
}

pub fn load_channel(path: &Path) -> anyhow::Result<Channel> {
    let f: ChannelFile = read_json(path, "channel")?;
    in_file(path, Channel::new(f.rows))
}

pub fn load_metric(path: &Path) -> anyhow::Result<Metric> {
    let f: MetricFile = read_json(path, "metric")?;
    in_file(path, Metric::new(f.values))
}

/// Elementwise natural log of a nonnegative table in metric format; zero
/// entries become `floor`, a finite stand-in for minus infinity.
pub fn load_metric_log_of(path: &Path, floor: f64) -> anyhow::Result<Metric> {
    let f: MetricFile = read_json(path, "metric")?;
    in_file(path, Metric::log_of(f.values, floor))
}

pub fn load_coupling(path: &Path) -> anyhow::Result<Coupling> {
    let f: CouplingFile = read_json(path, "coupling")?;
    in_file(path, Coupling::new(f.per_input))
}

pub fn load_distribution(path: &Path) -> anyhow::Result<Distribution> {
    let f: DistributionFile = read_json(path, "distribution")?;
    in_file(path, Distribution::new(f.probs))
}

/// Built-in instances.
pub enum Preset {
    /// Two inputs, three outputs, with a mismatched metric and a
    /// published maximal coupling.
    Example,
    /// Binary symmetric channel with the matched metric.
    Bsc(f64),
}

impl Preset {
    pub fn parse(name: &str) -> Option<Preset> {
        if name == "example" {
            return Some(Preset::Example);
        }
        let p: f64 = name.strip_prefix("bsc:")?.parse().ok()?;
        (0.0..=1.0).contains(&p).then_some(Preset::Bsc(p))
    }

    pub fn channel(&self) -> Channel {
        match self {
            Preset::Example => Channel::new(vec![vec![0.97, 0.03, 0.0], vec![0.1, 0.1, 0.8]])
                .expect("preset rows are distributions"),
            Preset::Bsc(p) => Channel::bsc(*p),
        }
    }

    pub fn metric(&self) -> Metric {
        match self {
            Preset::Example => Metric::new(vec![
                vec![0.0, 0.0, 0.0],
                vec![0.0, 0.5f64.ln(), 1.36f64.ln()],
            ])
            .expect("preset metric is finite"),
            Preset::Bsc(_) => Metric::matched(&self.channel(), DEFAULT_LOG_FLOOR),
        }
    }

    pub fn coupling(&self) -> Option<Coupling> {
        match self {
            Preset::Example => {
                let mut t = vec![vec![vec![0.0; 3]; 3]; 2];
                t[0][0][0] = 0.3778;
                t[0][0][1] = 0.5922;
                t[0][1][1] = 0.03;
                t[1][0][0] = 0.1;
                t[1][1][1] = 0.0911;
                t[1][2][2] = 0.6956;
                t[1][2][1] = 0.1133;
                Some(Coupling::new(t).expect("preset tables are distributions"))
            }
            Preset::Bsc(_) => None,
        }
    }
}

pub const DEFAULT_LOG_FLOOR: f64 = -1e9;

/// Files and presets naming one problem instance.
#[derive(Debug, Default, Clone)]
pub struct InstanceSpec {
    pub preset: Option<String>,
    pub channel: Option<PathBuf>,
    pub metric: Option<PathBuf>,
    pub metric_log_of: Option<PathBuf>,
    pub log_floor: Option<f64>,
    pub coupling: Option<PathBuf>,
    /// `uniform` or a distribution file.
    pub px: Option<String>,
}

pub struct Instance {
    pub channel: Option<Channel>,
    pub metric: Option<Metric>,
    pub coupling: Option<Coupling>,
    pub px: Option<Distribution>,
}

impl InstanceSpec {
    /// Parses every referenced file; files override preset parts. The
    /// channel defaults to the coupling's Y-marginal when only a coupling is
    /// given. All parts must agree on the alphabet sizes.
    pub fn load(&self) -> anyhow::Result<Instance> {
        let preset = match &self.preset {
            Some(name) => Some(Preset::parse(name).ok_or_else(|| UnknownPreset(name.clone()))?),
            None => None,
        };
        let coupling = match &self.coupling {
            Some(p) => Some(load_coupling(p)?),
            None => preset.as_ref().and_then(|p| p.coupling()),
        };
        let channel = match &self.channel {
            Some(p) => Some(load_channel(p)?),
            None => preset
                .as_ref()
                .map(|p| p.channel())
                .or_else(|| coupling.as_ref().map(marginal_y)),
        };
        let floor = self.log_floor.unwrap_or(DEFAULT_LOG_FLOOR);
        let metric = match (&self.metric, &self.metric_log_of) {
            (Some(_), Some(_)) => {
                return Err(Usage("give either --metric or --metric-log-of, not both".into()).into())
            }
            (Some(p), None) => Some(load_metric(p)?),
            (None, Some(p)) => Some(load_metric_log_of(p, floor)?),
            (None, None) => preset.as_ref().map(|p| p.metric()),
        };
        let inputs = channel
            .as_ref()
            .map(|c| c.inputs())
            .or(metric.as_ref().map(|m| m.inputs()))
            .or(coupling.as_ref().map(|c| c.inputs()));
        let px = match self.px.as_deref() {
            None => None,
            Some("uniform") => {
                let j = inputs.ok_or_else(|| {
                    Usage("--px uniform needs a channel, metric or coupling to size it".into())
                })?;
                Some(Distribution::uniform(j))
            }
            Some(path) => Some(load_distribution(Path::new(path))?),
        };
        let inst = Instance {
            channel,
            metric,
            coupling,
            px,
        };
        inst.check_shapes()?;
        Ok(inst)
    }
}

impl Instance {
    fn check_shapes(&self) -> anyhow::Result<()> {
        let mut shapes: Vec<(&str, usize, usize)> = Vec::new();
        if let Some(c) = &self.channel {
            shapes.push(("channel", c.inputs(), c.outputs()));
        }
        if let Some(m) = &self.metric {
            shapes.push(("metric", m.inputs(), m.outputs()));
        }
        if let Some(c) = &self.coupling {
            shapes.push(("coupling", c.inputs(), c.outputs()));
        }
        for w in shapes.windows(2) {
            let ((a, ai, ao), (b, bi, bo)) = (w[0], w[1]);
            if (ai, ao) != (bi, bo) {
                return Err(anyhow!(
                    "dimension mismatch: {} is {}x{} but {} is {}x{}",
                    a,
                    ai,
                    ao,
                    b,
                    bi,
                    bo
                ));
            }
        }
        if let (Some(px), Some(&(name, j, _))) = (&self.px, shapes.first()) {
            if px.len() != j {
                return Err(anyhow!(
                    "dimension mismatch: input distribution has {} letters but {} has {} inputs",
                    px.len(),
                    name,
                    j
                ));
            }
        }
        Ok(())
    }

    pub fn channel(&self) -> anyhow::Result<&Channel> {
        self.channel
            .as_ref()
            .ok_or_else(|| Usage("a channel is required (--channel or --instance)".into()).into())
    }

    pub fn metric(&self) -> anyhow::Result<&Metric> {
        self.metric.as_ref().ok_or_else(|| {
            Usage("a metric is required (--metric, --metric-log-of or --instance)".into()).into()
        })
    }

    pub fn coupling(&self) -> anyhow::Result<&Coupling> {
        self.coupling
            .as_ref()
            .ok_or_else(|| Usage("a coupling is required (--coupling or --instance)".into()).into())
    }

    pub fn px(&self) -> anyhow::Result<&Distribution> {
        self.px
            .as_ref()
            .ok_or_else(|| Usage("an input distribution is required (--px)".into()).into())
    }
}

/// A command-line mistake rather than a bad instance; exits with status 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

#[derive(Debug)]
pub struct UnknownPreset(pub String);

impl std::fmt::Display for UnknownPreset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "unknown instance '{}' (known: example, bsc:<p>)", self.0)
    }
}

impl std::error::Error for UnknownPreset {}

/// Writes `value` as pretty JSON, replacing `path` atomically.
pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("{}: cannot create a temporary file", dir.display()))?;
    serde_json::to_writer_pretty(&mut tmp, value)?;
    tmp.write_all(b"\n")?;
    tmp.persist(path)
        .map_err(|e| anyhow!("{}: cannot write report: {}", path.display(), e.error))?;
    Ok(())
}

/// Writes text output atomically, or to stdout when no path is given.
pub fn write_text(path: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => {
            let dir = match p.parent() {
                Some(d) if !d.as_os_str().is_empty() => d,
                _ => Path::new("."),
            };
            let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
            tmp.write_all(text.as_bytes())?;
            tmp.persist(p)
                .map_err(|e| anyhow!("{}: cannot write output: {}", p.display(), e.error))?;
        }
        None => print!("{}", text),
    }
    Ok(())
}
