use std::fmt;

use latentflow::baselines::BaselineError;
use latentflow::mld::MldError;
use latentflow::msdrl::MsdrlError;
use latentflow::reservoir::SimError;
use latentflow::sac::SacError;
use latentflow::scenario::ScenarioError;
use latentflow::TensorError;

/// A failed command and the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

pub const USAGE: i32 = 1;
pub const DATA: i32 = 2;
pub const NUMERIC: i32 = 3;

pub type Result<T, E = Failure> = std::result::Result<T, E>;

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: USAGE,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            code: DATA,
            message: message.into(),
        }
    }

    fn with(code: i32, e: impl fmt::Display) -> Self {
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::with(DATA, e)
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Self::with(DATA, e)
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Self::with(DATA, e)
    }
}

impl From<TensorError> for Failure {
    fn from(e: TensorError) -> Self {
        let code = match e {
            TensorError::NonFinite(_) => NUMERIC,
            TensorError::Config(_) => USAGE,
            TensorError::Shape { .. }
            | TensorError::Usage(_)
            | TensorError::Format(_)
            | TensorError::Io(_) => DATA,
        };
        Self::with(code, e)
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        let code = if matches!(e, SimError::Config(_)) {
            USAGE
        } else {
            NUMERIC
        };
        Self::with(code, e)
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Param(_) => Self::with(USAGE, e),
            ScenarioError::Sim(s) => s.into(),
            ScenarioError::Format(_) | ScenarioError::Io(_) | ScenarioError::Json(_) => {
                Self::with(DATA, e)
            }
        }
    }
}

impl From<MldError> for Failure {
    fn from(e: MldError) -> Self {
        match e {
            MldError::Tensor(t) => t.into(),
            MldError::Scenario(s) => s.into(),
            MldError::Config(_) => Self::with(USAGE, e),
            MldError::Diverged { .. } => Self::with(NUMERIC, e),
            MldError::Data(_) | MldError::Io(_) | MldError::Csv(_) | MldError::Json(_) => {
                Self::with(DATA, e)
            }
        }
    }
}

impl From<SacError> for Failure {
    fn from(e: SacError) -> Self {
        match e {
            SacError::Tensor(t) => t.into(),
            SacError::Config(_) | SacError::Usage(_) => Self::with(USAGE, e),
            SacError::Json(_) => Self::with(DATA, e),
        }
    }
}

impl From<MsdrlError> for Failure {
    fn from(e: MsdrlError) -> Self {
        match e {
            MsdrlError::Mld(m) => m.into(),
            MsdrlError::Sac(s) => s.into(),
            MsdrlError::Sim(s) => s.into(),
            MsdrlError::Scenario(s) => s.into(),
            MsdrlError::Config(_) => Self::with(USAGE, e),
            MsdrlError::Data(_) | MsdrlError::Io(_) | MsdrlError::Csv(_) => Self::with(DATA, e),
        }
    }
}

impl From<BaselineError> for Failure {
    fn from(e: BaselineError) -> Self {
        let code = if matches!(e, BaselineError::Config(_)) {
            USAGE
        } else {
            DATA
        };
        Self::with(code, e)
    }
}
