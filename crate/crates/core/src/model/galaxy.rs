//! Galaxy velocity data (82 recession velocities, units of 1000 km/s).

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{mean, sample_sd};

const ROEDER: &str = include_str!("../../data/galaxies_roeder.txt");
const CHIB78: &str = include_str!("../../data/galaxies_chib78.txt");

const N_GALAXIES: usize = 82;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GalaxyVariant {
    /// The original Roeder (1990) listing.
    Roeder,
    /// Observation 78 transcribed as 26.960 instead of 26.690.
    Chib78,
}

impl GalaxyVariant {
    pub fn builtin(self) -> Vec<f64> {
        let text = match self {
            GalaxyVariant::Roeder => ROEDER,
            GalaxyVariant::Chib78 => CHIB78,
        };
        parse_galaxy_text(text, self).expect("bundled galaxy data is valid")
    }
}

impl FromStr for GalaxyVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "roeder" => Ok(GalaxyVariant::Roeder),
            "chib78" => Ok(GalaxyVariant::Chib78),
            other => Err(Error::Config(format!(
                "unknown galaxy variant `{other}` (expected roeder or chib78)"
            ))),
        }
    }
}

/// Parses one velocity per line; blank lines and `#` comments are skipped.
pub fn parse_galaxy_text(text: &str, variant: GalaxyVariant) -> Result<Vec<f64>> {
    let mut values = Vec::with_capacity(N_GALAXIES);
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let v: f64 = line
            .parse()
            .map_err(|_| Error::Dataset(format!("line {}: cannot parse `{line}`", lineno + 1)))?;
        if !v.is_finite() {
            return Err(Error::Dataset(format!(
                "line {}: non-finite value",
                lineno + 1
            )));
        }
        values.push(v);
    }
    validate(&values, variant)?;
    Ok(values)
}

pub fn load_galaxy_file(path: &Path, variant: GalaxyVariant) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Dataset(format!("{}: {e}", path.display())))?;
    parse_galaxy_text(&text, variant)
}

fn validate(values: &[f64], variant: GalaxyVariant) -> Result<()> {
    if values.len() != N_GALAXIES {
        return Err(Error::Dataset(format!(
            "expected {N_GALAXIES} velocities, found {}",
            values.len()
        )));
    }
    let m = mean(values);
    let prec = 1.0 / sample_sd(values).powi(2);
    if variant == GalaxyVariant::Roeder && ((m - 20.8).abs() > 0.05 || (prec - 0.048).abs() > 0.002)
    {
        return Err(Error::Dataset(format!(
            "summary statistics off (mean {m:.4}, 1/var {prec:.5})"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_variants_differ_only_at_78() {
        let a = GalaxyVariant::Roeder.builtin();
        let b = GalaxyVariant::Chib78.builtin();
        assert_eq!(a.len(), 82);
        let diffs: Vec<usize> = (0..82).filter(|&i| a[i] != b[i]).collect();
        assert_eq!(diffs, vec![77]);
        assert_eq!(a[77], 26.690);
        assert_eq!(b[77], 26.960);
    }

    #[test]
    fn roeder_summaries() {
        let a = GalaxyVariant::Roeder.builtin();
        assert!((mean(&a) - 20.828).abs() < 1e-3);
        assert!((1.0 / sample_sd(&a).powi(2) - 0.04801).abs() < 1e-4);
    }

    #[test]
    fn loader_rejects_bad_files() {
        assert!(parse_galaxy_text("1.0\n2.0\n", GalaxyVariant::Roeder).is_err());
        let shifted: String = GalaxyVariant::Roeder
            .builtin()
            .iter()
            .map(|v| format!("{}\n", v + 1.0))
            .collect();
        assert!(parse_galaxy_text(&shifted, GalaxyVariant::Roeder).is_err());
        assert!(parse_galaxy_text("abc\n", GalaxyVariant::Roeder).is_err());
    }

    #[test]
    fn loader_reads_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.txt");
        std::fs::write(&path, format!("# velocities\n{ROEDER}")).unwrap();
        let v = load_galaxy_file(&path, GalaxyVariant::Roeder).unwrap();
        assert_eq!(v, GalaxyVariant::Roeder.builtin());
        assert!("nope".parse::<GalaxyVariant>().is_err());
    }
}
