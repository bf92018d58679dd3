//! Sequential vs data-parallel kernels on a 6 × 6 × 6 Neo-Hookean cube.
//!
//! With the default `parallel` feature every kernel runs twice: inside a
//! one-thread pool and on the full pool. Building with
//! `--no-default-features` times the plain sequential fallback instead.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use softgrad::adjoint::delta_a_blocks;
use softgrad::elasticity::{internal_force_and_rhs, project_all};
use softgrad::ident::scenes;
use softgrad::{assemble_system_matrix, MaterialParams};

/// Where a kernel runs: a dedicated rayon pool, or the caller's context
/// (the global pool, or plain sequential code without the feature).
struct Runner {
    #[cfg(feature = "parallel")]
    pool: Option<rayon::ThreadPool>,
}

impl Runner {
    fn run(&self, f: &mut (dyn FnMut() + Send)) {
        #[cfg(feature = "parallel")]
        if let Some(p) = &self.pool {
            return p.install(f);
        }
        f()
    }
}

#[cfg(feature = "parallel")]
fn runners() -> Vec<(String, Runner)> {
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    vec![
        ("single_thread".into(), Runner { pool: Some(one) }),
        (format!("global_pool_{}_threads", rayon::current_num_threads()), Runner { pool: None }),
    ]
}

#[cfg(not(feature = "parallel"))]
fn runners() -> Vec<(String, Runner)> {
    vec![("sequential".into(), Runner {})]
}

fn kernels(c: &mut Criterion) {
    let scene = scenes::cube(6, MaterialParams::neohookean(1e5, 0.3));
    let sys = assemble_system_matrix(&scene).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let q: Vec<f64> = scene.rest_positions().iter().map(|x| x + rng.gen_range(-2e-3..2e-3)).collect();
    let projections = project_all(&scene, &sys, &q).unwrap();

    let mut group = c.benchmark_group("kernels");
    for (label, runner) in runners() {
        let run = |f: &mut (dyn FnMut() + Send)| runner.run(f);
        group.bench_function(format!("project_all/{label}"), |b| b.iter(|| run(&mut || drop(black_box(project_all(&scene, &sys, &q).unwrap())))));
        group.bench_function(format!("internal_force/{label}"), |b| {
            b.iter(|| run(&mut || drop(black_box(internal_force_and_rhs(&sys, &q, &q, &projections)))))
        });
        group.bench_function(format!("delta_a_blocks/{label}"), |b| b.iter(|| run(&mut || drop(black_box(delta_a_blocks(&sys, &projections))))));
        group.bench_function(format!("spmv/{label}"), |b| b.iter(|| run(&mut || drop(black_box(sys.a.spmv(&q).unwrap())))));
    }
    group.finish();
}

criterion_group!(benches, kernels);
criterion_main!(benches);
