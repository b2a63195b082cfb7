//! Values frozen from the scripts in `tools/oracles`.

use isoembed::field::{Field, FieldKind};
use isoembed::free_maps::FreeMapRecord;
use isoembed::grid::make_ball_grid;
use isoembed::holder::holder_seminorm;
use isoembed::jet::Jet;
use isoembed::oscillator::profiles::{alpha_values, build_profiles, rho_value};
use isoembed::perturbation::build_e;
use isoembed::poisson::{assemble, dirichlet_solve, scalar_field};
use isoembed::smooth::PolyMap;

fn close(got: f64, want: f64, tol: f64) {
    assert!((got - want).abs() <= tol * (1.0 + want.abs()), "got {got:e}, want {want:e}");
}

// profiles.py
#[test]
fn antiderivative_and_inverse() {
    let p = build_profiles(256).unwrap();
    close(p.p_mean, 1.879_685_215_230_182_4, 1e-13);
    close(p.p(1.0), 1.681_362_339_519_238_3, 1e-12);
    close(p.p(-2.5), -4.550_469_256_837_213, 1e-12);
    for (s, b) in [
        (-7.5, -4.067_843_543_254_384_5),
        (0.3, 0.110_643_284_843_365_5),
        (4.0, 2.001_258_815_433_334),
        (9.9, 5.140_068_258_959_471),
    ] {
        close(p.beta(s).unwrap(), b, 1e-12);
    }
}

#[test]
fn profile_second_derivatives_and_wronskian() {
    for (t, w, a1, a2) in [
        (0.3, -9.255_244_082_540_333, 2.274_643_653_482_6, -4.365_806_225_893_485),
        (1.1, -6.935_367_708_722_837, -5.584_691_520_211_313, -0.071_536_689_267_454_49),
    ] {
        let v = alpha_values(t);
        close(v[4], a1, 1e-13);
        close(v[5], a2, 1e-13);
        close(v[2] * v[5] - v[3] * v[4], w, 1e-13);
        close(rho_value(t).powi(2), v[2] * v[2] + v[3] * v[3], 1e-13);
    }
}

// jets.py
#[test]
fn taylor_coefficients_of_composites() {
    let x = Jet::var(2, 4, 0, 0.3);
    let y = Jet::var(2, 4, 1, -0.2);
    let e = x.sin().add(&y.powi(2)).exp();
    let r = x.powi(2).mul(&y).add_const(1.0).sqrt().div(&y.cos().add_const(2.0));
    let want_e = [
        ([0, 0], 1.398_667_792_307_617),
        ([0, 1], -0.559_467_116_923_046_8),
        ([0, 2], 1.510_561_215_692_226_3),
        ([0, 3], -0.574_386_240_040_994_7),
        ([0, 4], 0.812_719_231_850_212_7),
        ([1, 0], 1.336_198_378_156_221_2),
        ([1, 1], -0.534_479_351_262_488_5),
        ([1, 2], 1.443_094_248_408_718_8),
        ([1, 3], -0.548_732_133_962_821_5),
        ([2, 0], 0.431_592_236_164_893_3),
        ([2, 1], -0.172_636_894_465_957_3),
        ([2, 2], 0.466_119_615_058_084_75),
        ([3, 0], -0.216_885_666_099_915_08),
        ([3, 1], 0.086_754_266_439_966_03),
        ([4, 0], -0.226_028_363_031_942_3),
    ];
    let want_r = [
        ([0, 0], 0.332_529_192_037_330_17),
        ([0, 1], -0.006_930_315_376_163_896),
        ([0, 2], 0.054_792_986_905_301_37),
        ([0, 3], -0.001_081_698_456_372_412_4),
        ([0, 4], 0.004_447_513_204_262_559),
        ([1, 0], -0.020_317_465_908_594_512),
        ([1, 1], 0.103_872_859_944_544_19),
        ([1, 2], -0.014_984_960_511_381_087),
        ([1, 3], 0.018_178_660_310_587_63),
        ([2, 0], -0.034_483_139_695_510_034),
        ([2, 1], 0.179_455_107_753_057_92),
        ([2, 2], -0.041_879_729_005_509_53),
        ([3, 0], -0.002_106_912_812_352_955),
        ([3, 1], 0.021_692_332_512_167_26),
        ([4, 0], -0.001_916_675_606_621_154_2),
    ];
    for (jet, want) in [(&e, &want_e), (&r, &want_r)] {
        for (ex, v) in want {
            close(jet.coeff(ex), *v, 1e-13);
        }
    }
}

// shortley_weller.py
#[test]
fn shortley_weller_values() {
    for (npts, center, probe, err) in [
        (
            17,
            -0.061_607_651_434_798_27,
            -0.055_810_182_189_697_244,
            0.000_892_348_565_201_726_8,
        ),
        (
            33,
            -0.062_268_963_156_171_54,
            -0.056_241_817_669_192_21,
            0.000_231_036_843_828_462_4,
        ),
    ] {
        let g = make_ball_grid::<f64>(2, npts).unwrap();
        let op = assemble(&g).unwrap();
        let f = scalar_field(&g, |x| x[0] * x[0] + x[1] * x[1]);
        let u = dirichlet_solve(&op, &f).unwrap();
        let c = ((npts - 1) / 2) as isize;
        let at = |i: isize, j: isize| u.get(g.node_at(&[i, j]).unwrap(), 0);
        close(at(c, c), center, 1e-12);
        close(at(c + (npts as isize - 1) / 4, c - (npts as isize - 1) / 8), probe, 1e-12);
        let max_err = (0..g.len())
            .filter(|&p| g.is_interior(p))
            .map(|p| {
                let r2 = g.radius2(p);
                (u.get(p, 0) - (r2 * r2 - 1.0) / 16.0).abs()
            })
            .fold(0.0, f64::max);
        close(max_err, err, 1e-9);
    }
}

// free_map_inverse.py
#[test]
fn gram_determinant_and_minimum_norm_inverse() {
    let g = make_ball_grid::<f64>(2, 9).unwrap();
    let map = PolyMap {
        n: 2,
        q: 7,
        terms: vec![
            (0, 1.0, vec![1, 0]),
            (1, 1.0, vec![0, 1]),
            (2, 1.0, vec![2, 0]),
            (3, 1.0, vec![1, 1]),
            (4, 1.0, vec![0, 2]),
            (5, 1.0, vec![3, 0]),
            (5, 3.0, vec![1, 2]),
            (6, 1.0, vec![0, 3]),
            (6, -1.0, vec![2, 1]),
        ],
    };
    let rec = FreeMapRecord::from_map(&g, &map);
    let p = g.node_at(&[5, 2]).unwrap();
    assert_eq!(g.coord_f64(p), vec![0.25, -0.5]);
    close(rec.margin[p], 858.068_603_515_625_1, 1e-12);
    let e = build_e(&rec).unwrap();
    let h = Field::from_fn(&g, FieldKind::Vector(2), |_, o| o.copy_from_slice(&[0.3, -0.2]));
    let f = Field::from_fn(&g, FieldKind::SymTensor, |_, o| o.copy_from_slice(&[1.0, 0.5, -0.7]));
    let want = [
        0.187_880_553_648_458,
        -0.378_345_035_307_934_73,
        0.519_737_447_466_306_1,
        0.071_259_662_060_138_19,
        0.136_124_844_899_163_63,
        -0.181_779_062_432_692_65,
        0.233_193_698_716_429_2,
    ];
    for (got, w) in e.apply(&h, &f).at(p).iter().zip(want) {
        close(*got, w, 1e-12);
    }
}

// holder.py
#[test]
fn holder_seminorm_by_enumeration() {
    let g = make_ball_grid::<f64>(2, 9).unwrap();
    let u = Field::scalar_fn(&g, |x| x[0] * x[0] - 0.5 * x[1] + (3.0 * x[0] * x[1]).sin());
    assert_eq!(g.closed_ball_nodes().len(), 49);
    let s = holder_seminorm(&u, 0.5).unwrap();
    assert!(s.exact);
    close(s.value, 2.428_620_644_440_145_7, 1e-13);
}

// grid_counts.py
#[test]
fn interior_counts() {
    for (n, npts, count) in [(1, 5, 3), (2, 3, 1), (2, 65, 3205)] {
        assert_eq!(make_ball_grid::<f64>(n, npts).unwrap().interior_count(), count);
    }
}
