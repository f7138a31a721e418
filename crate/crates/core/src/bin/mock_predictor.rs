//! Reference external predictor for protocol checks.
//!
//! Serves on stdin/stdout, or on TCP with `--listen`. Modes other than
//! `constant` and `lexicon` answer incorrectly on purpose.

use std::io::{self, BufReader};
use std::net::TcpListener;

use clap::{Parser, ValueEnum};
use fsdiag::fixture::{NEG_WORDS, POS_WORDS};
use fsdiag::protocol::{serve, Message};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    /// Always answer `--probs`.
    Constant,
    /// Two-class sentiment from the fixture lexicons.
    Lexicon,
    /// Probabilities that do not sum to one.
    BadSimplex,
    /// Echo a different request id.
    IdMismatch,
    /// Answer every request with an error message.
    Fail,
}

#[derive(Debug, Parser)]
#[command(name = "fsdiag-mock-predictor", version, about = "Mock external predictor")]
struct Args {
    #[arg(long, value_enum, default_value = "constant")]
    mode: Mode,
    /// Comma-separated class probabilities for constant mode.
    #[arg(long, default_value = "0.7,0.3", value_delimiter = ',')]
    probs: Vec<f64>,
    /// Serve one TCP connection on this address instead of stdio.
    #[arg(long)]
    listen: Option<String>,
}

fn lexicon_probs(tokens: &[String]) -> Vec<f64> {
    let score: f64 = tokens
        .iter()
        .map(|t| {
            if POS_WORDS.contains(&t.as_str()) {
                1.0
            } else if NEG_WORDS.contains(&t.as_str()) {
                -1.0
            } else {
                0.0
            }
        })
        .sum();
    let pos = 1.0 / (1.0 + (-score).exp());
    vec![1.0 - pos, pos]
}

fn main() -> io::Result<()> {
    let args = Args::parse();
    let classes = match args.mode {
        Mode::Lexicon => 2,
        _ => args.probs.len(),
    };
    let probs = args.probs.clone();
    let mode = args.mode;
    let respond = move |id: &str, tokens: &[String]| match mode {
        Mode::Constant => Message::Proba {
            id: id.into(),
            probs: probs.clone(),
        },
        Mode::Lexicon => Message::Proba {
            id: id.into(),
            probs: lexicon_probs(tokens),
        },
        Mode::BadSimplex => Message::Proba {
            id: id.into(),
            probs: probs.iter().map(|p| p * 0.8).collect(),
        },
        Mode::IdMismatch => Message::Proba {
            id: format!("{id}-stale"),
            probs: probs.clone(),
        },
        Mode::Fail => Message::Error {
            id: Some(id.into()),
            message: "mock failure".into(),
        },
    };
    let capabilities = ["proba"];
    match &args.listen {
        Some(addr) => {
            let listener = TcpListener::bind(addr)?;
            eprintln!("listening on {}", listener.local_addr()?);
            let (stream, _) = listener.accept()?;
            let reader = BufReader::new(stream.try_clone()?);
            serve(reader, stream, classes, &capabilities, respond)
        }
        None => serve(
            io::stdin().lock(),
            io::stdout().lock(),
            classes,
            &capabilities,
            respond,
        ),
    }
}
