use std::fmt;
use std::process::ExitCode;

use regcast_core::config::ConfigError;
use regcast_core::engine::EngineError;
use regcast_core::ensemble::EnsembleError;
use regcast_core::eval::EvalError;
use regcast_core::forge::ForgeError;
use regcast_core::gateway::GatewayError;
use regcast_core::knowledge::KnowledgeError;
use regcast_core::scheduler::SchedulerError;
use regcast_core::tsv::TableError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Config,
    Input,
    ProviderUnavailable,
    RunFailure,
}

impl Kind {
    pub fn exit_code(self) -> u8 {
        match self {
            Kind::Config => 3,
            Kind::Input => 4,
            Kind::ProviderUnavailable => 5,
            Kind::RunFailure => 6,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: Kind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(Kind::Config, message)
    }

    pub fn input(message: impl Into<String>) -> Self {
        Self::new(Kind::Input, message)
    }

    pub fn run(message: impl Into<String>) -> Self {
        Self::new(Kind::RunFailure, message)
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.kind.exit_code())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let label = match self.kind {
            Kind::Config => "configuration error",
            Kind::Input => "input error",
            Kind::ProviderUnavailable => "provider unavailable",
            Kind::RunFailure => "run failed",
        };
        write!(f, "{label}: {}", self.message)
    }
}

fn gateway_kind(e: &GatewayError) -> Kind {
    match e {
        GatewayError::Timeout
        | GatewayError::Transport(_)
        | GatewayError::HttpStatus { .. }
        | GatewayError::MalformedBody(_)
        | GatewayError::EmptyContent
        | GatewayError::Io(_) => Kind::ProviderUnavailable,
        GatewayError::Unscripted { .. } | GatewayError::InvalidRequest(_) => Kind::RunFailure,
    }
}

fn knowledge_kind(e: &KnowledgeError) -> Kind {
    match e {
        KnowledgeError::Unavailable(_) => Kind::ProviderUnavailable,
        KnowledgeError::UnmappedMoa(_) | KnowledgeError::Table(_) | KnowledgeError::Io(_) => Kind::Input,
    }
}

fn ensemble_kind(e: &EnsembleError) -> Kind {
    match e {
        EnsembleError::Gateway(g) => gateway_kind(g),
        EnsembleError::Knowledge(k) => knowledge_kind(k),
        EnsembleError::InvalidSample(_) => Kind::Input,
        EnsembleError::Prompt(_) | EnsembleError::NoExperts => Kind::RunFailure,
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::config(e.to_string())
    }
}

impl From<TableError> for CliError {
    fn from(e: TableError) -> Self {
        Self::input(e.to_string())
    }
}

impl From<ForgeError> for CliError {
    fn from(e: ForgeError) -> Self {
        Self::input(e.to_string())
    }
}

impl From<KnowledgeError> for CliError {
    fn from(e: KnowledgeError) -> Self {
        Self::new(knowledge_kind(&e), e.to_string())
    }
}

impl From<SchedulerError> for CliError {
    fn from(e: SchedulerError) -> Self {
        let kind = match &e {
            SchedulerError::Gateway(g) => gateway_kind(g),
            SchedulerError::Knowledge(k) => knowledge_kind(k),
            SchedulerError::NoTrials => Kind::Config,
            SchedulerError::Prompt(_) => Kind::RunFailure,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        let kind = match e.root() {
            EngineError::Ensemble(inner) => ensemble_kind(inner),
            EngineError::Knowledge(k) => knowledge_kind(k),
            EngineError::ResumeMismatch { .. } | EngineError::BadState { .. } => Kind::Input,
            _ => Kind::RunFailure,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        Self::input(e.to_string())
    }
}

/// Attaches a path to an io error from writing outputs.
pub fn write_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::run(format!("{}: {e}", path.display()))
}
