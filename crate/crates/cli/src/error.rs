use std::fmt;
use std::io;

use tslingua::codec::CodecError;
use tslingua::corpus::CorpusError;
use tslingua::evalkit::EvalError;
use tslingua::inference::{BackendError, ForecastError};
use tslingua::prompt::PromptError;
use tslingua::qa::QaError;
use tslingua::vocabulary::VocabError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Usage,
    Data,
    Backend,
    Io,
}

impl Category {
    pub fn exit_code(self) -> i32 {
        match self {
            Category::Usage => 2,
            Category::Data => 3,
            Category::Backend => 4,
            Category::Io => 5,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Usage => "usage",
            Category::Data => "data",
            Category::Backend => "backend",
            Category::Io => "io",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub category: Category,
    pub message: String,
}

impl CliError {
    pub fn new(category: Category, message: impl Into<String>) -> Self {
        Self {
            category,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(Category::Usage, message)
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self::new(Category::Data, message)
    }

    /// Prefixes the message, e.g. with the file being read.
    pub fn context(mut self, what: impl fmt::Display) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }
}

impl fmt::Display for CliError {
    /// `error[<category>]: <message>` on a single line.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let one_line = self.message.replace('\n', " ");
        write!(f, "error[{}]: {one_line}", self.category.as_str())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

macro_rules! category_from {
    ($ty:ty, |$e:ident| $cat:expr) => {
        impl From<$ty> for CliError {
            fn from($e: $ty) -> Self {
                let category = $cat;
                CliError::new(category, $e.to_string())
            }
        }
    };
}

category_from!(io::Error, |e| Category::Io);
category_from!(CodecError, |e| Category::Data);
category_from!(PromptError, |e| Category::Data);
category_from!(QaError, |e| Category::Data);
category_from!(BackendError, |e| Category::Backend);
category_from!(VocabError, |e| match e {
    VocabError::Io(_) => Category::Io,
    _ => Category::Data,
});
category_from!(CorpusError, |e| match e {
    CorpusError::Io(_) => Category::Io,
    CorpusError::InvalidConfig(_) => Category::Usage,
    _ => Category::Data,
});
category_from!(ForecastError, |e| forecast_category(&e));
category_from!(EvalError, |e| match &e {
    EvalError::Forecast(f) => forecast_category(f),
    EvalError::InvalidConfig(_) => Category::Usage,
    _ => Category::Data,
});
category_from!(csv::Error, |e| if e.is_io_error() {
    Category::Io
} else {
    Category::Data
});
category_from!(serde_json::Error, |e| if e.is_io() {
    Category::Io
} else {
    Category::Data
});

fn forecast_category(e: &ForecastError) -> Category {
    match e {
        ForecastError::Backend(_) | ForecastError::InsufficientWords { .. } => Category::Backend,
        ForecastError::ZeroHorizon => Category::Usage,
        ForecastError::Codec(_) => Category::Data,
    }
}
