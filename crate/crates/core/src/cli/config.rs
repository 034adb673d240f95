use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::gan::GanConfig;
use crate::inpaint::InpaintConfig;
use crate::obm::ObmParams;
use crate::{Error, Result};

/// Everything a run can be configured with. Every section is optional in
/// the file; command-line flags take precedence over file values.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Channel synthesis parameters. Absent means the defaults for the
    /// requested image size.
    pub obm: Option<ObmParams>,
    pub gan: GanConfig,
    pub inpaint: InpaintConfig,
    /// Images to synthesize or sample.
    pub count: Option<usize>,
    /// Overrides the seeds inside the sections when set.
    pub seed: Option<u64>,
    pub paths: Paths,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub measurements: Option<PathBuf>,
    pub samples: Option<PathBuf>,
    pub log: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::from_json(&std::fs::read_to_string(p)?),
            None => Ok(Self::default()),
        }
    }

    /// Checks each section against its own invariants. Image-size fields
    /// of the network section are only checked when a model is built.
    pub fn validate(&self) -> Result<()> {
        if let Some(obm) = &self.obm {
            obm.validate()?;
        }
        self.gan.adam.validate()?;
        self.inpaint.validate()?;
        if self.count == Some(0) {
            return Err(Error::Invalid("count must be at least 1".into()));
        }
        Ok(())
    }
}

/// First of `flag` and `file`, or an error naming the missing option.
pub fn required<T: Clone>(flag: &Option<T>, file: &Option<T>, name: &str) -> Result<T> {
    flag.clone().or_else(|| file.clone()).ok_or_else(|| {
        Error::Invalid(format!(
            "--{name} is required (or set it in the config file)"
        ))
    })
}
