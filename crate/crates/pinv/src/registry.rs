//! The built-in benchmark corpus.

use pinv_core::sampler::Domain;
use pinv_core::{parse_expr, parse_program, Expr, Program};
use thiserror::Error;

/// One pre-expectation to try in sub-invariant mode.
#[derive(Clone, Copy, Debug)]
pub struct SubCase {
    pub pre: &'static str,
    /// A known sub-invariant, when one has been reported for this pair.
    pub expected: Option<&'static str>,
    pub features: &'static [&'static str],
}

#[derive(Clone, Copy, Debug)]
pub struct BenchmarkEntry {
    pub name: &'static str,
    pub source: &'static str,
    pub post: &'static str,
    /// Extra features for exact mode.
    pub features: &'static [&'static str],
    /// Domain spec applied on top of the defaults.
    pub domain: &'static str,
    /// The exact invariant.
    pub expected: Option<&'static str>,
    /// Whether exact-mode synthesis is expected to find `expected`.
    pub synthesis_target: bool,
    pub sub: &'static [SubCase],
}

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("no benchmark named `{0}`")]
    NotFound(String),
    #[error("benchmark `{name}`: {source}")]
    Parse { name: String, source: pinv_core::ParseError },
}

impl BenchmarkEntry {
    fn parse_err(&self) -> impl Fn(pinv_core::ParseError) -> RegistryError + '_ {
        move |source| RegistryError::Parse { name: self.name.to_string(), source }
    }

    /// The program with `features` appended to its feature list.
    pub fn program_with(&self, features: &[&str]) -> Result<Program, RegistryError> {
        let mut prog = parse_program(self.source).map_err(self.parse_err())?;
        for f in features {
            let e = parse_expr(f, &prog.vars).map_err(self.parse_err())?;
            prog.features.push(e);
        }
        Ok(prog)
    }

    pub fn program(&self) -> Result<Program, RegistryError> {
        self.program_with(self.features)
    }

    pub fn expr(&self, prog: &Program, text: &str) -> Result<Expr, RegistryError> {
        parse_expr(text, &prog.vars).map_err(self.parse_err())
    }

    pub fn domain(&self) -> Domain {
        Domain::parse_spec(self.domain).expect("registry domains are well formed")
    }
}

const fn sub(pre: &'static str, expected: Option<&'static str>) -> SubCase {
    SubCase { pre, expected, features: &[] }
}

const GEO_INV: &str = "z + [flip == 0]*(1 - p1)/p1";

static REGISTRY: &[BenchmarkEntry] = &[
    BenchmarkEntry {
        name: "biasdir",
        source: include_str!("../benchmarks/biasdir.pw"),
        post: "x",
        features: &[],
        domain: "",
        expected: Some("x + [x == y]*(1/2 - x)"),
        synthesis_target: true,
        sub: &[sub("[x != y]*x", Some("x + [x == y]*(p/10 - x/2 - y/2 + 1/10)")), sub("[x == y]*1/2", None)],
    },
    BenchmarkEntry {
        name: "bin0",
        source: include_str!("../benchmarks/bin0.pw"),
        post: "x",
        features: &[],
        domain: "",
        expected: Some("x + [n > 0]*p*n*y"),
        synthesis_target: true,
        sub: &[sub("x + [n > 0]*p*n*y", None), sub("x", Some("x"))],
    },
    BenchmarkEntry {
        name: "bin1",
        source: include_str!("../benchmarks/bin1.pw"),
        post: "n",
        features: &[],
        domain: "",
        expected: Some("n + [n < M]*(M - n)"),
        synthesis_target: true,
        sub: &[sub("n + [n < M]*(p*M - p*n)", None), sub("n", Some("n"))],
    },
    BenchmarkEntry {
        name: "bin2",
        source: include_str!("../benchmarks/bin2.pw"),
        post: "x",
        features: &["p*n"],
        domain: "",
        expected: Some("x + [n > 0]*(p*n*(n + 1)/2 + (1 - p)*n*y)"),
        synthesis_target: true,
        sub: &[sub("x + [n > 0]*(1 - p)*n*y", None), sub("x", Some("x"))],
    },
    BenchmarkEntry {
        name: "deprv",
        source: include_str!("../benchmarks/deprv.pw"),
        post: "x*y",
        features: &[],
        domain: "",
        expected: Some("x*y + [n > 0]*(n*n/4 + n*x/2 + n*y/2 - n/4)"),
        synthesis_target: false,
        sub: &[sub("x*y + [n > 0]*n*n/4", None), sub("x*y", Some("x*y"))],
    },
    BenchmarkEntry {
        name: "detm",
        source: include_str!("../benchmarks/detm.pw"),
        post: "count",
        features: &[],
        domain: "",
        expected: Some("count + [x <= 10]*(11 - x)"),
        synthesis_target: true,
        sub: &[sub("count + [x <= 10]*1", Some("count + [x <= 10]*1"))],
    },
    BenchmarkEntry {
        name: "fair",
        source: include_str!("../benchmarks/fair.pw"),
        post: "count",
        features: &[],
        domain: "",
        expected: Some("count + [c1 + c2 == 0]*(p1 + p2)/(p1 + p2 - p1*p2)"),
        synthesis_target: true,
        sub: &[
            sub("count + [c1 + c2 == 0]*(p1 + p2)", Some("count + [c1 + c2 == 0]*(p1 + p2)")),
            sub("count", Some("count")),
        ],
    },
    BenchmarkEntry {
        name: "duel",
        source: include_str!("../benchmarks/duel.pw"),
        post: "t",
        features: &[],
        domain: "",
        expected: None,
        synthesis_target: false,
        sub: &[sub("1 + c*(-p2/(p1 + p2 - p1*p2))", None)],
    },
    BenchmarkEntry {
        name: "gambler",
        source: include_str!("../benchmarks/gambler.pw"),
        post: "z",
        features: &[],
        domain: "",
        expected: Some("z + [x > 0 and y > x]*x*(y - x)"),
        synthesis_target: true,
        sub: &[
            sub("z", Some("z")),
            SubCase { pre: "x*(y - x)", expected: Some("z + [x > 0 and y > x]*x*(y - x)"), features: &["y - x"] },
        ],
    },
    BenchmarkEntry {
        name: "geo0",
        source: include_str!("../benchmarks/geo0.pw"),
        post: "z",
        features: &[],
        domain: "",
        expected: Some(GEO_INV),
        synthesis_target: true,
        sub: &[
            sub("z + [flip == 0]*(1 - p1)", Some("z + [flip == 0]*(1 - p1)")),
            sub("z", Some("z")),
            sub("[flip == 0]*(1 - p1)", Some("z + [flip == 0]*(1 - p1)")),
        ],
    },
    BenchmarkEntry {
        name: "geo1",
        source: include_str!("../benchmarks/geo1.pw"),
        post: "z",
        features: &[],
        domain: "",
        expected: Some(GEO_INV),
        synthesis_target: true,
        sub: &[sub("z", Some("z"))],
    },
    BenchmarkEntry {
        name: "geo2",
        source: include_str!("../benchmarks/geo2.pw"),
        post: "z",
        features: &[],
        domain: "",
        expected: Some(GEO_INV),
        synthesis_target: true,
        sub: &[sub("z", Some("z"))],
    },
    BenchmarkEntry {
        name: "geoar",
        source: include_str!("../benchmarks/geoar.pw"),
        post: "x",
        features: &["1/p"],
        domain: "",
        expected: Some("x + [z != 0]*(y*(1 - p)/p + (1 - p)/(p*p))"),
        synthesis_target: true,
        sub: &[sub("x + [z != 0]*y*(1 - p)/p", None), sub("x", Some("x"))],
    },
    BenchmarkEntry {
        name: "linexp",
        source: include_str!("../benchmarks/linexp.pw"),
        post: "z",
        features: &[],
        domain: "",
        expected: Some("z + [n > 0]*21/8*n"),
        synthesis_target: false,
        sub: &[
            sub("z + [n > 0]*2", Some("z + [n > 0]*(n + 1)")),
            sub("z + [n > 0]*2*n", Some("z + [n > 0]*2*n")),
        ],
    },
    BenchmarkEntry {
        name: "mart",
        source: include_str!("../benchmarks/mart.pw"),
        post: "rounds",
        features: &[],
        domain: "",
        expected: Some("rounds + [b > 0]*(1/p)"),
        synthesis_target: true,
        sub: &[sub("rounds + [b > 0]*1", Some("rounds + [b > 0]*1")), sub("rounds", Some("rounds"))],
    },
    BenchmarkEntry {
        name: "prinsys",
        source: include_str!("../benchmarks/prinsys.pw"),
        post: "[x == 1]",
        features: &[],
        domain: "x=-1:1",
        expected: Some("[x == 1] + [x == 0]*(1 - p2)"),
        synthesis_target: true,
        sub: &[sub("[x == 1]", Some("[x == 1]"))],
    },
    BenchmarkEntry {
        name: "revbin",
        source: include_str!("../benchmarks/revbin.pw"),
        post: "z",
        features: &[],
        domain: "",
        expected: Some("z + [x > 0]*x/p"),
        synthesis_target: true,
        sub: &[sub("z + [x > 0]*x", Some("z + [x > 0]*x")), sub("z", Some("z"))],
    },
    BenchmarkEntry {
        name: "sum0",
        source: include_str!("../benchmarks/sum0.pw"),
        post: "x",
        features: &["p*n"],
        domain: "",
        expected: Some("x + [n > 0]*(p*n*n/2 + p*n/2)"),
        synthesis_target: true,
        sub: &[
            sub("x + [n > 0]*p*n*n/2", None),
            SubCase { pre: "x + [n > 0]*p*n/2", expected: Some("x + [n > 0]*p*n"), features: &["p*n"] },
        ],
    },
];

pub fn registry() -> &'static [BenchmarkEntry] {
    REGISTRY
}

/// Case-insensitive lookup.
pub fn lookup(name: &str) -> Result<&'static BenchmarkEntry, RegistryError> {
    REGISTRY.iter().find(|b| b.name.eq_ignore_ascii_case(name)).ok_or_else(|| RegistryError::NotFound(name.to_string()))
}
