#![allow(dead_code)]

use nonlin::{ControlSystem, Expr};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_expr(rng: &mut impl Rng, n: usize, m: usize, depth: u32) -> Expr {
    gen_expr(rng, n, m, depth, true)
}

/// Constants stay within a few units, so finite differences stay meaningful.
pub fn tame_expr(rng: &mut impl Rng, n: usize, m: usize, depth: u32) -> Expr {
    gen_expr(rng, n, m, depth, false)
}

fn gen_expr(rng: &mut impl Rng, n: usize, m: usize, depth: u32, wild: bool) -> Expr {
    let leaf = depth == 0 || rng.random_bool(0.25);
    if leaf {
        return match rng.random_range(0..4) {
            0 => {
                // mix of integers, decimals, negatives and awkward magnitudes
                let kinds = if wild { 4 } else { 3 };
                let c = match rng.random_range(0..kinds) {
                    0 => rng.random_range(-5..=5) as f64,
                    1 => rng.random_range(-100..=100) as f64 / 8.0,
                    2 => rng.random_range(-1.0..1.0),
                    _ => rng.random_range(-1.0..1.0) * 10f64.powi(rng.random_range(-12..12)),
                };
                Expr::constant(c)
            }
            1 if m > 0 => Expr::input(rng.random_range(0..m)),
            _ => Expr::state(rng.random_range(0..n)),
        };
    }
    let sub = |rng: &mut _| gen_expr(rng, n, m, depth - 1, wild);
    match rng.random_range(0..9) {
        0 => -sub(rng),
        1 => sub(rng) + sub(rng),
        2 => sub(rng) - sub(rng),
        3 => sub(rng) * sub(rng),
        4 => {
            let num = sub(rng);
            // keep denominators away from zero
            let den = Expr::constant(1.5) + sub(rng).powi(2);
            num / den
        }
        5 => sub(rng).powi(rng.random_range(-3..=4)),
        6 => sub(rng).sin(),
        7 => sub(rng).cos(),
        _ => (Expr::constant(0.25) * sub(rng)).sin().exp(),
    }
}

pub fn random_system(rng: &mut impl Rng) -> ControlSystem {
    let n = rng.random_range(1..=4);
    let m = rng.random_range(0..=3);
    let states = (1..=n).map(|i| format!("x{i}")).collect();
    let inputs = (1..=m).map(|i| format!("u{i}")).collect();
    let rhs = (0..n).map(|_| random_expr(rng, n, m, 4)).collect();
    ControlSystem::new("random", states, inputs, rhs).expect("valid by construction")
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn heading() -> ControlSystem {
    nonlin::parse("system heading\nstates x1 x2\ninputs v\ndx1 = sin(v)\ndx2 = cos(v)\n").unwrap()
}

pub fn cascade() -> ControlSystem {
    nonlin::parse("system cascade\nstates x1 x2 x3\ninputs u\ndx1 = u\ndx2 = x3^3\ndx3 = u^3\n").unwrap()
}

/// `ẋ1 = sin x3, ẋ2 = cos x3, ẋ3 = x4, …, ẋn = u`.
pub fn heading_chain(n: usize) -> ControlSystem {
    let names: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    let mut src = format!("system chain\nstates {}\ninputs u\ndx1 = sin(x3)\ndx2 = cos(x3)\n", names.join(" "));
    for i in 3..n {
        src.push_str(&format!("dx{i} = x{}\n", i + 1));
    }
    src.push_str(&format!("dx{n} = u\n"));
    nonlin::parse(&src).unwrap()
}
