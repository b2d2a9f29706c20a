use std::fmt;
use std::io;
use std::path::Path;

use goalcast::airspace::GeoError;
use goalcast::data::DataError;
use goalcast::evaluator::EvalError;
use goalcast::goalnet::ModelError;
use goalcast::radio::RadioError;
use goalcast::sim::SimError;
use goalcast::trainer::TrainError;

/// Failure classes, one exit code each. Usage errors (2) come from clap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    InputMissing,
    InvalidInput,
    Schema,
    Runtime,
    OutputWrite,
}

impl Kind {
    pub fn code(self) -> i32 {
        match self {
            Kind::InputMissing => 3,
            Kind::InvalidInput => 4,
            Kind::Schema => 5,
            Kind::Runtime => 6,
            Kind::OutputWrite => 7,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Kind::InputMissing => "input_missing",
            Kind::InvalidInput => "invalid_input",
            Kind::Schema => "schema_mismatch",
            Kind::Runtime => "runtime",
            Kind::OutputWrite => "output_write",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub msg: String,
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn new(kind: Kind, msg: impl Into<String>) -> Self {
        Self { kind, msg: msg.into() }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Self::new(Kind::InvalidInput, msg)
    }

    /// Failure to read an input file.
    pub fn read(path: &Path, e: io::Error) -> Self {
        let kind = match e.kind() {
            io::ErrorKind::NotFound | io::ErrorKind::PermissionDenied => Kind::InputMissing,
            _ => Kind::InvalidInput,
        };
        Self::new(kind, format!("{}: {e}", path.display()))
    }

    pub fn write(path: &Path, e: io::Error) -> Self {
        Self::new(Kind::OutputWrite, format!("{}: {e}", path.display()))
    }

    /// The single stderr line: `goalcast: error kind=<k> code=<n>: <msg>`.
    pub fn line(&self) -> String {
        let msg = self.msg.replace('\n', " ");
        format!("goalcast: error kind={} code={}: {msg}", self.kind.name(), self.kind.code())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}

fn io_kind(e: &io::Error) -> Kind {
    match e.kind() {
        io::ErrorKind::NotFound | io::ErrorKind::PermissionDenied => Kind::InputMissing,
        _ => Kind::InvalidInput,
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        let kind = match &e {
            DataError::Io { source, .. } => io_kind(source),
            DataError::Schema { .. } => Kind::Schema,
            DataError::Malformed { .. } | DataError::Header(_) => Kind::InvalidInput,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        let kind = match &e {
            ModelError::Io { source, .. } => io_kind(source),
            ModelError::Mismatch { .. } => Kind::Schema,
            ModelError::Checkpoint(_) | ModelError::Config(_) | ModelError::UnknownLabel(_) => Kind::InvalidInput,
            ModelError::EmptyObservation | ModelError::Autodiff(_) => Kind::Runtime,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Model(m) => m.into(),
            TrainError::Config(_) | TrainError::Empty(_) => Self::invalid(e.to_string()),
            TrainError::Io { .. } => Self::new(Kind::OutputWrite, e.to_string()),
            TrainError::NonFinite(_) | TrainError::Diverged { .. } => Self::new(Kind::Runtime, e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Model(m) => m.into(),
            EvalError::Train(t) => t.into(),
            EvalError::Empty(_) | EvalError::DegeneratePermutation | EvalError::Config(_) => {
                Self::invalid(e.to_string())
            }
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        Self::invalid(e.to_string())
    }
}

impl From<RadioError> for CliError {
    fn from(e: RadioError) -> Self {
        let kind = match e {
            RadioError::UndefinedWer => Kind::Runtime,
            _ => Kind::InvalidInput,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<GeoError> for CliError {
    fn from(e: GeoError) -> Self {
        Self::invalid(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_are_distinct() {
        let kinds = [Kind::InputMissing, Kind::InvalidInput, Kind::Schema, Kind::Runtime, Kind::OutputWrite];
        let mut codes: Vec<i32> = kinds.iter().map(|k| k.code()).collect();
        codes.sort();
        codes.dedup();
        assert_eq!(codes.len(), kinds.len());
        assert!(!codes.contains(&0) && !codes.contains(&2));
    }

    #[test]
    fn missing_file_is_input_missing() {
        let e = CliError::read(Path::new("/nope"), io::Error::from(io::ErrorKind::NotFound));
        assert_eq!(e.kind, Kind::InputMissing);
        assert_eq!(e.line(), "goalcast: error kind=input_missing code=3: /nope: entity not found");
    }

    #[test]
    fn schema_errors_map_to_schema() {
        let e: CliError = DataError::Schema { found: "9".into(), expected: 1 }.into();
        assert_eq!(e.kind, Kind::Schema);
        let e: CliError = ModelError::Mismatch { expected: "a".into(), found: "b".into() }.into();
        assert_eq!(e.kind, Kind::Schema);
    }
}
