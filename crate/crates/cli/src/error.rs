use std::process::ExitCode;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("infeasible instance: {0}")]
    Infeasible(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Infeasible(_) => 4,
        })
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<rfdlab_core::simulator::SimError> for CliError {
    fn from(e: rfdlab_core::simulator::SimError) -> Self {
        use rfdlab_core::simulator::SimError;
        match e {
            SimError::Infeasible(_) => CliError::Infeasible(e.to_string()),
            SimError::MixedConfig(_) => CliError::Config(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<rfdlab_core::estimation::EstimationError> for CliError {
    fn from(e: rfdlab_core::estimation::EstimationError) -> Self {
        use rfdlab_core::estimation::EstimationError;
        match e {
            EstimationError::InvalidInput(_) => CliError::Config(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<rfdlab_core::bayesopt::BayesOptError> for CliError {
    fn from(e: rfdlab_core::bayesopt::BayesOptError) -> Self {
        use rfdlab_core::bayesopt::BayesOptError;
        match e {
            BayesOptError::TooLarge(_) | BayesOptError::InfeasibleTolerance(_) => CliError::Infeasible(e.to_string()),
            BayesOptError::InvalidInput(_) => CliError::Config(e.to_string()),
            BayesOptError::Gaussian(_) => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<rfdlab_core::rfd::RfdError> for CliError {
    fn from(e: rfdlab_core::rfd::RfdError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<rfdlab_core::kernels::KernelError> for CliError {
    fn from(e: rfdlab_core::kernels::KernelError) -> Self {
        use rfdlab_core::kernels::KernelError;
        match e {
            KernelError::InvalidParameter(_) => CliError::Config(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}
