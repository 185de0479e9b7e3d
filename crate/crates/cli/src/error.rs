use std::fmt;

use preclab_core::analysis::AnalysisError;
use preclab_core::exprgen::ExprError;
use preclab_core::geometry::GeometryError;
use preclab_core::interventions::InterventionError;
use preclab_core::tinylm::TinyLmError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Usage,
    Data,
    Numeric,
}

impl Kind {
    pub fn exit_code(self) -> i32 {
        match self {
            Kind::Usage => 1,
            Kind::Data => 2,
            Kind::Numeric => 3,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub msg: String,
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        Self { kind: Kind::Usage, msg: msg.into() }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Self { kind: Kind::Data, msg: msg.into() }
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Self { kind: Kind::Numeric, msg: msg.into() }
    }

    /// Prefixes the message, keeping the kind.
    pub fn context(self, what: impl fmt::Display) -> Self {
        Self {
            kind: self.kind,
            msg: format!("{what}: {}", self.msg),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::data(e.to_string())
    }
}

impl From<ExprError> for CliError {
    fn from(e: ExprError) -> Self {
        Self::data(e.to_string())
    }
}

impl From<TinyLmError> for CliError {
    fn from(e: TinyLmError) -> Self {
        let kind = match e {
            TinyLmError::Diverged { .. } => Kind::Numeric,
            TinyLmError::InvalidConfig(_) | TinyLmError::Hook(_) => Kind::Usage,
            _ => Kind::Data,
        };
        Self { kind, msg: e.to_string() }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Model(m) => m.into(),
            AnalysisError::NonFinite | AnalysisError::Numeric(_) => Self::numeric(e.to_string()),
            _ => Self::data(e.to_string()),
        }
    }
}

impl From<InterventionError> for CliError {
    fn from(e: InterventionError) -> Self {
        match e {
            InterventionError::Model(m) => m.into(),
            InterventionError::Analysis(a) => a.into(),
            _ => Self::data(e.to_string()),
        }
    }
}

impl From<GeometryError> for CliError {
    fn from(e: GeometryError) -> Self {
        match e {
            GeometryError::DegenerateSet => Self::numeric(e.to_string()),
            _ => Self::data(e.to_string()),
        }
    }
}
