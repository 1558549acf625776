mod common;

use std::time::Instant;

use fracmag::assembly::Assembler;

#[test]
fn line_stiffness_matches_fourier_symbol() {
    for s in [0.25, 0.5, 0.75] {
        let disc = common::line_disc(1.0 / 16.0);
        let h = disc.omega.spacing[0];
        let asm = Assembler::new(disc, common::params(1, s, 1.0)).unwrap();
        let st = asm.gagliardo_stiffness();
        let mid = st.nrows() / 2;
        // entries next to the boundary exercise the exterior tail term
        for (row, m) in [(mid, 0usize), (mid, 1), (mid, 2), (mid, 5), (0, 0), (0, 1), (1, 3)] {
            let want = common::fourier_hat_entry_1d(s, h, m as f64);
            let got = st[(row, row + m)];
            println!("s={s} row={row} m={m} got={got:.10e} want={want:.10e} rel={:.2e}", (got - want).abs() / want.abs());
            assert!((got - want).abs() <= 1e-5 * want.abs().max(1e-2 * st[(mid, mid)]), "s={s} m={m}");
        }
    }
}

#[test]
fn square_stiffness_matches_fourier_symbol() {
    let s = 0.5;
    let disc = common::square_disc(0.08);
    let h = disc.omega.spacing[0];
    let t0 = Instant::now();
    let asm = Assembler::new(disc, common::params(2, s, 1.5)).unwrap();
    let st = asm.gagliardo_stiffness();
    println!("assembly {:?}", t0.elapsed());
    let g = asm.grid();
    let c = (g.cells[0] / 2, g.cells[1] / 2, 0);
    let i = g.interior_index(&[c.0, c.1, 0]).unwrap();
    for (m1, m2) in [(0usize, 0usize), (1, 0), (1, 1), (3, 2)] {
        let j = g.interior_index(&[c.0 + m1, c.1 + m2, 0]).unwrap();
        let i = if m1 == 1 && m2 == 1 { g.interior_index(&[1, 1, 0]).unwrap() } else { i };
        let j = if m1 == 1 && m2 == 1 { g.interior_index(&[2, 2, 0]).unwrap() } else { j };
        let want = common::fourier_hat_entry_2d(s, h, m1 as f64, m2 as f64);
        let got = st[(i, j)];
        println!("m=({m1},{m2}) got={got:.8e} want={want:.8e} rel={:.2e}", (got - want).abs() / want.abs());
        assert!((got - want).abs() <= 1e-4 * want.abs().max(1e-2 * st[(i, i)]));
    }
}

#[test]
fn torsion_quadrature_matches_closed_form() {
    use fracmag::kernel::fractional_laplacian_constant;
    for n in [1, 2] {
        for s in [0.3, 0.5, 0.7] {
            let scale = 0.5 * fractional_laplacian_constant(n, s);
            let q = common::torsion_lambda_quadrature(n, s, scale);
            let c = common::torsion_constant_closed_form(n, s);
            assert!((q - c).abs() < 1e-9 * c, "n={n} s={s}: {q} vs {c}");
        }
    }
}
