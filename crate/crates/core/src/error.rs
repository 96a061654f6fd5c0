use thiserror::Error;

use crate::channel::ChannelError;
use crate::data::DataError;
use crate::harness::HarnessError;
use crate::lewis::LewisError;
use crate::marl::MarlError;
use crate::nn::NnError;
use crate::sm::SmError;
use crate::symbolic::SymbolicError;
use crate::sync::SyncError;

/// Any error of the crate, tagged with the module it surfaced from.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Lewis(#[from] LewisError),
    #[error(transparent)]
    Sm(#[from] SmError),
    #[error(transparent)]
    Sync(#[from] SyncError),
    #[error(transparent)]
    Marl(#[from] MarlError),
    #[error(transparent)]
    Symbolic(#[from] SymbolicError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
}

impl Error {
    pub fn module(&self) -> &'static str {
        match self {
            Error::Nn(_) => "nn",
            Error::Channel(_) => "channel",
            Error::Lewis(_) => "lewis",
            Error::Sm(_) => "sm",
            Error::Sync(_) => "sync",
            Error::Marl(_) => "marl",
            Error::Symbolic(_) => "symbolic",
            Error::Data(_) => "data",
            Error::Harness(_) => "harness",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
