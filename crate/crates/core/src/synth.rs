//! Synthetic code generator for desk-scale experiments.
//!
//! Produces function-like snippets from a tiny expression grammar: typed
//! parameters, `let` bindings, nested conditionals, a return. The output is
//! regular enough to learn from in minutes yet varied enough that test error
//! falls with data, capacity, and steps. Document `i` depends only on
//! `(preset, seed, i)`, so a corpus of size n is a prefix of one of size n+1.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, Document};
use crate::error::{Error, Result};
use crate::seeds::{self, tags};

/// Type keywords used in annotations; the misspelling-detection label
/// generator perturbs exactly these.
pub const TYPE_KEYWORDS: [&str; 5] = ["int", "float", "bool", "char", "str"];

const IDENTS: [&str; 24] = [
    "val", "acc", "tmp", "lhs", "rhs", "num", "idx", "cur", "res", "arg", "lim", "pos", "len",
    "sum", "top", "low", "high", "step", "rate", "size", "mark", "base", "span", "seed",
];

const FN_NAMES: [&str; 16] = [
    "scan", "fold", "join", "clip", "rank", "shift", "merge", "probe", "blend", "trace", "widen",
    "pack", "slice", "count", "order", "clamp",
];

const CMP_OPS: [&str; 4] = ["<", ">", "==", "!="];
const BIN_OPS: [&str; 4] = ["+", "-", "*", "/"];

/// Statement-count buckets. One is drawn uniformly per document, which spreads
/// token lengths across the whole range the length-probe bins care about.
const SIZE_BUCKETS: [(usize, usize); 5] = [(1, 2), (3, 5), (6, 9), (10, 14), (15, 22)];

/// Generate `n` documents for a named preset. Presets: `expr`.
pub fn synth_generate(preset: &str, n: usize, seed: u64) -> Result<Corpus> {
    match preset {
        "expr" => {}
        other => {
            return Err(Error::UnknownPreset {
                name: other.to_string(),
                available: "expr".to_string(),
            })
        }
    }
    let documents = (0..n)
        .map(|i| {
            let mut rng = seeds::rng(seed, &[tags::SYNTH, i as u64]);
            Document {
                language: "expr".to_string(),
                content: gen_function(&mut rng),
                id: i as u64,
            }
        })
        .collect();
    Ok(Corpus::new(
        documents,
        format!("synth(expr, n={n})"),
        seed,
    ))
}

fn gen_function(rng: &mut ChaCha8Rng) -> String {
    let name = *FN_NAMES.choose(rng).unwrap();
    let n_params = rng.gen_range(1..=3);
    let params: Vec<String> = (0..n_params)
        .map(|_| format!("{}: {}", ident(rng), ty(rng)))
        .collect();
    let ret_ty = ty(rng);

    let &(lo, hi) = SIZE_BUCKETS.choose(rng).unwrap();
    let n_stmts = rng.gen_range(lo..=hi);

    let mut body = String::new();
    for _ in 0..n_stmts {
        body.push_str(&stmt(rng, 1));
    }
    body.push_str(&format!("  ret {};\n", expr(rng, 1)));

    format!(
        "fn {name}({}) -> {ret_ty} {{\n{body}}}\n",
        params.join(", ")
    )
}

fn stmt(rng: &mut ChaCha8Rng, indent: usize) -> String {
    let pad = "  ".repeat(indent);
    // Conditionals get rarer with depth so bodies stay bounded.
    let branch = indent < 3 && rng.gen_bool(0.25);
    if branch {
        let cond = format!("{} {} {}", expr(rng, 1), CMP_OPS.choose(rng).unwrap(), expr(rng, 1));
        let then_s = stmt(rng, indent + 1);
        if rng.gen_bool(0.5) {
            let else_s = stmt(rng, indent + 1);
            format!("{pad}if {cond} {{\n{then_s}{pad}}} else {{\n{else_s}{pad}}}\n")
        } else {
            format!("{pad}if {cond} {{\n{then_s}{pad}}}\n")
        }
    } else {
        format!(
            "{pad}let {}: {} = {};\n",
            ident(rng),
            ty(rng),
            expr(rng, 0)
        )
    }
}

fn expr(rng: &mut ChaCha8Rng, depth: usize) -> String {
    if depth >= 3 || rng.gen_bool(0.4) {
        return atom(rng);
    }
    let a = expr(rng, depth + 1);
    let b = expr(rng, depth + 1);
    let op = *BIN_OPS.choose(rng).unwrap();
    if depth > 0 && rng.gen_bool(0.5) {
        format!("({a} {op} {b})")
    } else {
        format!("{a} {op} {b}")
    }
}

fn atom(rng: &mut ChaCha8Rng) -> String {
    if rng.gen_bool(0.5) {
        ident(rng).to_string()
    } else {
        rng.gen_range(0..100).to_string()
    }
}

fn ident(rng: &mut ChaCha8Rng) -> &'static str {
    IDENTS.choose(rng).unwrap()
}

fn ty(rng: &mut ChaCha8Rng) -> &'static str {
    TYPE_KEYWORDS.choose(rng).unwrap()
}
