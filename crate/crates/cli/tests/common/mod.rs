//! Fixtures shared by the integration and acceptance tests.

pub const BASE: &str = r#"kind = "bsde"
horizon = 1.0

[generator]
delta = 1.0
alpha = 0.0
beta = 0.1
gamma = [0.0]

[terminal]
catalog = "exp-affine"
scale = 1.0
slope = [1.0]

[numerics]
n_steps = 10
n_paths = 1000
seed = 1
"#;

pub fn mutate(from: &str, to: &str) -> String {
    assert!(BASE.contains(from), "{from}");
    BASE.replacen(from, to, 1)
}

pub fn invalid_configs() -> Vec<(&'static str, String)> {
    vec![
        ("unknown top-level key", mutate("horizon = 1.0", "horizon = 1.0\ncolour = 3")),
        ("unknown block key", mutate("delta = 1.0", "delta = 1.0\nepsilon = 2")),
        ("unknown kind", mutate("kind = \"bsde\"", "kind = \"bsdee\"")),
        ("negative alpha", mutate("alpha = 0.0", "alpha = -1")),
        ("negative beta expression", mutate("beta = 0.1", "beta = \"0.1 - t\"")),
        ("negative delta", mutate("delta = 1.0", "delta = -0.5")),
        ("bad expression", mutate("beta = 0.1", "beta = \"0.1 +* t\"")),
        ("unbound variable", mutate("beta = 0.1", "beta = \"y + 1\"")),
        ("zero paths", mutate("n_paths = 1000", "n_paths = 0")),
        ("zero steps", mutate("n_steps = 10", "n_steps = 0")),
        ("negative seed", mutate("seed = 1", "seed = -4")),
        ("string for number", mutate("n_steps = 10", "n_steps = \"ten\"")),
        ("negative horizon", mutate("horizon = 1.0", "horizon = -1.0")),
        ("unknown catalog", mutate("catalog = \"exp-affine\"", "catalog = \"gaussian\"")),
        ("slope dimension", mutate("slope = [1.0]", "slope = [1.0, 2.0]")),
        ("bad branch", mutate("gamma = [0.0]", "gamma = [0.0]\nbranch = \"sideways\"")),
        ("negative branch with even m", mutate("gamma = [0.0]", "gamma = [0.0]\nbranch = \"negative\"\n").replace("delta = 1.0", "delta = 0.5")),
        ("unknown weighting", mutate("seed = 1", "seed = 1\nweighting = \"heavy\"")),
        ("zero degree", mutate("seed = 1", "seed = 1\ndegree = 0")),
        ("negative clamp", mutate("seed = 1", "seed = 1\nclamp = -1e-6")),
        ("unsorted ladder", mutate("seed = 1", "seed = 1\n\n[ladder]\nkind = \"sup\"\nlevels = [4.0, 2.0]")),
        ("malformed toml", mutate("scale = 1.0", "scale = ")),
        ("custom not dominated", mutate("gamma = [0.0]", "gamma = [0.0]\ncustom = \"2*z^2/y\"")),
    ]
}
