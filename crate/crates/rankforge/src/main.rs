//! Command-line front end: static rankwidth computation, annotation
//! emission and verification, dynamic replay, cliquewidth expressions, and
//! the log-height transform.
//!
//! Exit codes: 0 success, 1 refusal (rankwidth exceeds the bound or a
//! replay assertion fails), 2 input error, 3 budget/size-limit error.

use clap::{Parser, Subcommand, ValueEnum};
use rankforge::annotated::{self, Annotated};
use rankforge::cliquewidth;
use rankforge::decomposition::{
    exact_rankwidth, log_height_transform, Engine, RankDecomposition, SearchError,
    BNB_MAX_PARTS, EXHAUSTIVE_MAX_PARTS,
};
use rankforge::dynamic::{DynamicConfig, DynamicRankwidth, FlipOutcome};
use rankforge::fastalg;
use rankforge::graph::{Graph, PartitionedGraph};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const EXIT_OK: u8 = 0;
const EXIT_REFUSED: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_BUDGET: u8 = 3;

#[derive(Parser)]
#[command(name = "rankforge", version, about = "Rank decompositions of graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Oracle {
    Exhaustive,
    Bnb,
    Fast,
}

#[derive(Subcommand)]
enum Command {
    /// Compute a rank decomposition of width ≤ k, or refuse.
    Rankwidth {
        /// Graph file (`n m` header, one `u v` edge per line).
        graph: PathBuf,
        #[arg(short)]
        k: usize,
        /// Engine; defaults by size: exhaustive below 10 vertices,
        /// branch-and-bound below 16, budget error above.
        #[arg(long, value_enum)]
        oracle: Option<Oracle>,
    },
    /// Annotate a rank decomposition of a graph.
    Annotate {
        graph: PathBuf,
        /// Decomposition file (`rooted <r>`/`unrooted` header, `parent`
        /// or `edge` lines, `leaf <node> <vertex…>` lines).
        decomp: PathBuf,
    },
    /// Check that an annotation encodes the given graph.
    Verify {
        graph: PathBuf,
        /// Annotation file (decomposition section followed by R/E/F lines).
        annot: PathBuf,
    },
    /// Run the dynamic structure over an update stream.
    Replay {
        /// Initial state: an annotation file, or `empty:N` for the
        /// N-vertex edgeless graph.
        init: String,
        /// Update stream: `flip u v`, `refine`, `improve-height`,
        /// `assert-width w`, `assert-graph <file>`.
        stream: PathBuf,
        #[arg(short)]
        k: usize,
        /// Keep a shadow graph and let the exact oracle decide refusals.
        #[arg(long)]
        shadow: bool,
    },
    /// Emit a cliquewidth k-expression for an annotated decomposition.
    Cliquewidth { annot: PathBuf },
    /// Rebalance a decomposition with the log-height transform.
    Balance { graph: PathBuf, decomp: PathBuf },
}

fn read_file(path: &Path) -> Result<String, u8> {
    std::fs::read_to_string(path).map_err(|e| {
        eprintln!("error: cannot read {}: {e}", path.display());
        EXIT_INPUT
    })
}

fn load_graph(path: &Path) -> Result<Graph, u8> {
    Graph::parse(&read_file(path)?).map_err(|e| {
        eprintln!("error: bad graph {}: {e}", path.display());
        EXIT_INPUT
    })
}

fn load_annotated(path: &Path) -> Result<Annotated, u8> {
    Annotated::parse(&read_file(path)?).map_err(|e| {
        eprintln!("error: bad annotation {}: {e}", path.display());
        EXIT_INPUT
    })
}

fn search_exit(e: &SearchError) -> u8 {
    match e {
        SearchError::Budget(_) | SearchError::SizeLimit(_) => EXIT_BUDGET,
        SearchError::Invalid(_) => EXIT_INPUT,
    }
}

fn budget() -> usize {
    std::env::var("RANKFORGE_BUDGET")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(rankforge::closure::DEFAULT_CLOSURE_BUDGET)
}

fn cmd_rankwidth(graph: &Path, k: usize, oracle: Option<Oracle>) -> u8 {
    let g = match load_graph(graph) {
        Ok(g) => g,
        Err(c) => return c,
    };
    let n = g.n();
    let oracle = oracle.unwrap_or(if n < EXHAUSTIVE_MAX_PARTS {
        Oracle::Exhaustive
    } else if n < BNB_MAX_PARTS {
        Oracle::Bnb
    } else {
        eprintln!("error: {n} vertices exceed the exact-engine limits; use --oracle fast");
        return EXIT_BUDGET;
    });
    let result = if oracle == Oracle::Fast {
        fastalg::compute_rankwidth(&g, k).map(|o| o.map(|a| a.to_decomposition()))
    } else {
        let engine = match oracle {
            Oracle::Exhaustive => Engine::Exhaustive,
            _ => Engine::BranchBound,
        };
        let pg = PartitionedGraph::singletons(g);
        exact_rankwidth(&pg, k, engine)
    };
    match result {
        Ok(Some(d)) => {
            print!("{}", d.to_text());
            EXIT_OK
        }
        Ok(None) => {
            eprintln!("rankwidth > {k}");
            EXIT_REFUSED
        }
        Err(e) => {
            eprintln!("error: {e}");
            search_exit(&e)
        }
    }
}

fn load_graph_and_decomp(graph: &Path, decomp: &Path) -> Result<(PartitionedGraph, RankDecomposition), u8> {
    let g = load_graph(graph)?;
    let d = RankDecomposition::parse(&read_file(decomp)?).map_err(|e| {
        eprintln!("error: bad decomposition {}: {e}", decomp.display());
        EXIT_INPUT
    })?;
    let pg = PartitionedGraph::singletons(g);
    d.validate(&pg).map_err(|e| {
        eprintln!("error: decomposition does not fit graph: {e}");
        EXIT_INPUT
    })?;
    Ok((pg, d))
}

fn cmd_annotate(graph: &Path, decomp: &Path) -> u8 {
    match load_graph_and_decomp(graph, decomp) {
        Ok((pg, d)) => {
            print!("{}", annotated::annotate(&pg, &d).to_full_text());
            EXIT_OK
        }
        Err(c) => c,
    }
}

fn cmd_verify(graph: &Path, annot: &Path) -> u8 {
    let g = match load_graph(graph) {
        Ok(g) => g,
        Err(c) => return c,
    };
    let a = match load_annotated(annot) {
        Ok(a) => a,
        Err(c) => return c,
    };
    let pg = PartitionedGraph::singletons(g);
    match annotated::verify_encoding(&a, &pg) {
        Ok(()) => {
            println!("ok");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: encoding check failed: {e}");
            EXIT_INPUT
        }
    }
}

fn cmd_replay(init: &str, stream: &Path, k: usize, shadow: bool) -> u8 {
    let cfg = DynamicConfig {
        budget: budget(),
        verification: shadow,
        ..DynamicConfig::default()
    };
    let built = if let Some(n) = init.strip_prefix("empty:") {
        match n.parse::<usize>() {
            Ok(n) => DynamicRankwidth::init_empty(n, k, cfg),
            Err(e) => {
                eprintln!("error: bad vertex count in `{init}`: {e}");
                return EXIT_INPUT;
            }
        }
    } else {
        match load_annotated(Path::new(init)) {
            Ok(a) => DynamicRankwidth::init_from(&a, k, cfg),
            Err(c) => return c,
        }
    };
    let mut ds = match built {
        Ok(ds) => ds,
        Err(e) => {
            eprintln!("error: {e}");
            return search_exit(&e);
        }
    };
    let text = match read_file(stream) {
        Ok(t) => t,
        Err(c) => return c,
    };
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let toks: Vec<&str> = line.split_whitespace().collect();
        let step = |r: Result<FlipOutcome, SearchError>| -> Result<(), u8> {
            match r {
                Ok(FlipOutcome::Applied) => Ok(()),
                Ok(FlipOutcome::Refused) => {
                    eprintln!("line {lineno}: refused: {line}");
                    Err(EXIT_REFUSED)
                }
                Err(e) => {
                    eprintln!("line {lineno}: error: {e}");
                    Err(search_exit(&e))
                }
            }
        };
        let outcome: Result<(), u8> = match toks.as_slice() {
            [] => Ok(()),
            ["flip", u, v] => match (u.parse(), v.parse()) {
                (Ok(u), Ok(v)) => step(ds.flip_edge(u, v)),
                _ => {
                    eprintln!("line {lineno}: bad flip: {line}");
                    Err(EXIT_INPUT)
                }
            },
            ["refine"] => step(ds.refine_now()),
            ["improve-height"] => match ds.improve_height_now() {
                Ok(()) => Ok(()),
                Err(e) => {
                    eprintln!("line {lineno}: error: {e}");
                    Err(search_exit(&e))
                }
            },
            ["assert-width", w] => match w.parse::<usize>() {
                Ok(w) if ds.width() <= w => Ok(()),
                Ok(w) => {
                    eprintln!("line {lineno}: width {} exceeds asserted {w}", ds.width());
                    Err(EXIT_REFUSED)
                }
                Err(e) => {
                    eprintln!("line {lineno}: bad width: {e}");
                    Err(EXIT_INPUT)
                }
            },
            ["assert-graph", file] => {
                match (load_graph(Path::new(file)), ds.graph()) {
                    (Err(c), _) => Err(c),
                    (_, Err(e)) => {
                        eprintln!("line {lineno}: error: {e}");
                        Err(search_exit(&e))
                    }
                    (Ok(want), Ok(got)) => {
                        // The decoded graph is sized by the largest vertex
                        // id; compare edge sets to tolerate padding.
                        if want.edges() == got.edges() {
                            Ok(())
                        } else {
                            eprintln!("line {lineno}: graph mismatch");
                            Err(EXIT_REFUSED)
                        }
                    }
                }
            }
            _ => {
                eprintln!("line {lineno}: bad update: {line}");
                Err(EXIT_INPUT)
            }
        };
        if let Err(c) = outcome {
            return c;
        }
    }
    println!("width {} height {}", ds.width(), ds.height());
    EXIT_OK
}

fn cmd_cliquewidth(annot: &Path) -> u8 {
    let a = match load_annotated(annot) {
        Ok(a) => a,
        Err(c) => return c,
    };
    match cliquewidth::emit(&a) {
        Ok(expr) => {
            print!("{}", expr.to_text());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_INPUT
        }
    }
}

fn cmd_balance(graph: &Path, decomp: &Path) -> u8 {
    match load_graph_and_decomp(graph, decomp) {
        Ok((_, d)) => {
            print!("{}", log_height_transform(&d).decomposition.to_text());
            EXIT_OK
        }
        Err(c) => c,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match &cli.command {
        Command::Rankwidth { graph, k, oracle } => cmd_rankwidth(graph, *k, *oracle),
        Command::Annotate { graph, decomp } => cmd_annotate(graph, decomp),
        Command::Verify { graph, annot } => cmd_verify(graph, annot),
        Command::Replay { init, stream, k, shadow } => cmd_replay(init, stream, *k, *shadow),
        Command::Cliquewidth { annot } => cmd_cliquewidth(annot),
        Command::Balance { graph, decomp } => cmd_balance(graph, decomp),
    };
    ExitCode::from(code)
}
