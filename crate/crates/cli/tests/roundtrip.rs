use std::path::PathBuf;

use posmu_cli::problem::{BlockEntry, FileOptions, LinkEntry, MatrixProblem, Problem, ProblemFile, SystemProblem};
use proptest::prelude::*;

#[test]
fn corpus_round_trips() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data");
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let Ok(file) = ProblemFile::load(&path) else { continue };
        let again = ProblemFile::parse(&file.to_json()).unwrap();
        assert_eq!(again, file, "{}", path.display());
        assert_eq!(again.digest(), file.digest());
    }
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![-1e6..1e6f64, any::<f64>().prop_filter("finite", |x| x.is_finite())]
}

fn rows(r: usize, c: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(finite(), c), r)
}

fn blocks() -> impl Strategy<Value = Vec<BlockEntry>> {
    prop::collection::vec(
        (prop::sample::select(vec!["full", "repeated_scalar"]), 1i64..4, prop::sample::select(vec!["real", "complex"]))
            .prop_map(|(k, s, f)| BlockEntry { kind: k.into(), size: s, field: f.into() }),
        1..4,
    )
}

fn problem() -> impl Strategy<Value = Problem> {
    prop_oneof![
        (1usize..5).prop_flat_map(|n| (rows(n, n), blocks()))
            .prop_map(|(m, structure)| Problem::Matrix(MatrixProblem { m, structure })),
        (1usize..4, 1usize..3).prop_flat_map(|(n, m)| (
            rows(n, n), rows(n, m), rows(m, n), rows(m, m), prop::option::of(rows(m, m)), blocks()
        ))
        .prop_map(|(a, b, c, d, delays, structure)| Problem::System(SystemProblem { a, b, c, d, delays, structure })),
        (2usize..5).prop_flat_map(|n| (
            prop::collection::vec(finite(), n),
            prop::collection::vec((0..n, 0..n, finite()).prop_map(|(from, to, gain)| LinkEntry { from, to, gain }), 0..4),
            rows(n, 2),
            rows(2, n),
            blocks(),
            prop::option::of(prop::collection::vec(finite(), n)),
        ))
        .prop_map(|(h, interference, e, f, structure, p0)| Problem::Fm(posmu_cli::problem::FmSpec {
            nu: h.clone(), gamma: h.clone(), k: h.clone(), h, interference, e, f, structure, delays: None, p0,
        })),
    ]
}

proptest! {
    #[test]
    fn parse_serialize_parse_is_the_identity(problem in problem(), seed in prop::option::of(any::<u64>()), tol in prop::option::of(1e-12..1e-1f64)) {
        let file = ProblemFile { version: 1, problem, options: FileOptions { seed, tol, ..FileOptions::default() } };
        let text = file.to_json();
        let once = ProblemFile::parse(&text).unwrap();
        prop_assert_eq!(&once, &file);
        prop_assert_eq!(ProblemFile::parse(&once.to_json()).unwrap(), once);
    }
}
