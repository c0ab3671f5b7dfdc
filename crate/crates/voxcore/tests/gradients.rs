//! Finite-difference checks for every differentiable op, in the 64-bit
//! shadow mode and in 32-bit.

use voxcore::gradcheck::{grad_check, GradCheckOptions, GradCheckReport, Stencil};
use voxcore::{Activation, ConvSpec, Element, Graph, PaddingMode, Result, Tensor, Var};

fn rand_tensor<T: Element>(shape: &[usize], seed: u64) -> Tensor<T> {
    let mut s = seed.wrapping_add(0x9e3779b97f4a7c15);
    Tensor::from_fn(shape, |_| {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        T::from_f64(((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0)
    })
}

/// Contract the op output with a fixed random tensor so every output
/// coordinate contributes an O(1) gradient (coefficients bounded away from 0).
fn probe<T: Element>(g: &mut Graph<T>, y: Var) -> Result<Var> {
    let r = rand_tensor::<T>(g.shape(y), 777).map(|v| v.signum() * (v.abs() + T::from_f64(0.5)));
    let rv = g.constant(r);
    let m = g.mul(y, rv)?;
    Ok(g.sum(m))
}

type OpFn<T> = Box<dyn Fn(&mut Graph<T>, &[Var]) -> Result<Var>>;

fn cases<T: Element>() -> Vec<(&'static str, Vec<Tensor<T>>, OpFn<T>)> {
    let x5 = || rand_tensor::<T>(&[1, 2, 4, 3, 4], 1);
    let pos = || rand_tensor::<T>(&[6], 2).map(|v| v + T::from_f64(2.0));
    let vec6 = |s| rand_tensor::<T>(&[6], s);
    vec![
        (
            "add",
            vec![vec6(3), vec6(4)],
            Box::new(|g, p| {
                let y = g.add(p[0], p[1])?;
                probe(g, y)
            }),
        ),
        (
            "sub",
            vec![vec6(3), vec6(4)],
            Box::new(|g, p| {
                let y = g.sub(p[0], p[1])?;
                probe(g, y)
            }),
        ),
        (
            "mul",
            vec![vec6(3), vec6(4)],
            Box::new(|g, p| {
                let y = g.mul(p[0], p[1])?;
                probe(g, y)
            }),
        ),
        (
            "div",
            vec![vec6(3), pos()],
            Box::new(|g, p| {
                let y = g.div(p[0], p[1])?;
                probe(g, y)
            }),
        ),
        (
            "add_scalar",
            vec![vec6(3), rand_tensor(&[1], 5)],
            Box::new(|g, p| {
                let y = g.add_scalar(p[0], p[1])?;
                probe(g, y)
            }),
        ),
        (
            "mul_scalar",
            vec![vec6(3), rand_tensor(&[1], 5)],
            Box::new(|g, p| {
                let y = g.mul_scalar(p[0], p[1])?;
                probe(g, y)
            }),
        ),
        (
            "affine",
            vec![vec6(3)],
            Box::new(|g, p| {
                let y = g.affine(p[0], -1.7, 0.3);
                probe(g, y)
            }),
        ),
        (
            "scale",
            vec![vec6(3)],
            Box::new(|g, p| {
                let y = g.scale(p[0], 2.5);
                probe(g, y)
            }),
        ),
        (
            "offset",
            vec![vec6(3)],
            Box::new(|g, p| {
                let y = g.offset(p[0], -0.4);
                probe(g, y)
            }),
        ),
        (
            "neg",
            vec![vec6(3)],
            Box::new(|g, p| {
                let y = g.neg(p[0]);
                probe(g, y)
            }),
        ),
        (
            "sum",
            vec![vec6(3)],
            Box::new(|g, p| {
                let s = g.sum(p[0]);
                Ok(g.square(s))
            }),
        ),
        (
            "mean",
            vec![vec6(3)],
            Box::new(|g, p| {
                let m = g.mean(p[0]);
                let s = g.square(m);
                Ok(g.sum(s))
            }),
        ),
        (
            "square",
            vec![vec6(3)],
            Box::new(|g, p| {
                let y = g.square(p[0]);
                probe(g, y)
            }),
        ),
        (
            "abs",
            vec![vec6(3)],
            Box::new(|g, p| {
                let y = g.abs(p[0]);
                probe(g, y)
            }),
        ),
        (
            "sqrt",
            vec![pos()],
            Box::new(|g, p| {
                let y = g.sqrt(p[0]);
                probe(g, y)
            }),
        ),
        (
            "relu",
            vec![vec6(8)],
            Box::new(|g, p| {
                let y = g.activation(p[0], Activation::Relu)?;
                probe(g, y)
            }),
        ),
        (
            "leaky_relu",
            vec![vec6(9)],
            Box::new(|g, p| {
                let y = g.activation(p[0], Activation::LeakyRelu(0.2))?;
                probe(g, y)
            }),
        ),
        (
            "tanh",
            vec![vec6(9)],
            Box::new(|g, p| {
                let y = g.activation(p[0], Activation::Tanh)?;
                probe(g, y)
            }),
        ),
        (
            "pad_zero",
            vec![x5()],
            Box::new(|g, p| {
                let y = g.pad_zero(p[0], [(1, 0), (-1, 2), (0, -1)])?;
                probe(g, y)
            }),
        ),
        (
            "pad_reflect",
            vec![x5()],
            Box::new(|g, p| {
                let y = g.pad_reflect(p[0], [1, 2, 1])?;
                probe(g, y)
            }),
        ),
        (
            "avg_pool2",
            vec![x5()],
            Box::new(|g, p| {
                let y = g.avg_pool2(p[0])?;
                probe(g, y)
            }),
        ),
        (
            "channel",
            vec![x5()],
            Box::new(|g, p| {
                let y = g.channel(p[0], 1)?;
                probe(g, y)
            }),
        ),
        (
            "conv3d",
            vec![x5(), rand_tensor(&[3, 2, 3, 3, 3], 6), rand_tensor(&[3], 7)],
            Box::new(|g, p| {
                let spec = ConvSpec::cubic(2, 3, 3, 2, 1, PaddingMode::Reflect);
                let y = g.conv3d(p[0], p[1], Some(p[2]), &spec)?;
                probe(g, y)
            }),
        ),
        (
            "conv_transpose3d",
            vec![x5(), rand_tensor(&[2, 3, 3, 3, 3], 6), rand_tensor(&[3], 7)],
            Box::new(|g, p| {
                let spec = ConvSpec::cubic(2, 3, 3, 2, 1, PaddingMode::Zero).with_output_padding(1);
                let y = g.conv_transpose3d(p[0], p[1], Some(p[2]), &spec)?;
                probe(g, y)
            }),
        ),
        (
            "instance_norm",
            vec![
                x5(),
                rand_tensor::<T>(&[2], 8).map(|v| v + T::one()),
                rand_tensor(&[2], 9),
            ],
            Box::new(|g, p| {
                let y = g.instance_norm(p[0], p[1], p[2], 1e-5)?;
                probe(g, y)
            }),
        ),
    ]
}

fn run<T: Element>(opts: &GradCheckOptions, tol: f64) {
    let mut worst: Vec<(&str, GradCheckReport)> = Vec::new();
    for (name, params, f) in cases::<T>() {
        let r = grad_check(f, &params, opts).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(r.checked > 0, "{name}: nothing checked");
        worst.push((name, r));
    }
    for (name, r) in &worst {
        assert!(r.max_rel_error < tol, "{} {name}: {r:?}", T::NAME);
    }
}

#[test]
fn every_op_passes_in_f64() {
    run::<f64>(
        &GradCheckOptions {
            kink_margin: true,
            ..GradCheckOptions::default()
        },
        1e-5,
    );
}

#[test]
fn every_op_passes_in_f32() {
    run::<f32>(
        &GradCheckOptions {
            kink_margin: true,
            step: 3e-2,
            stencil: Stencil::ThreePoint,
            ..GradCheckOptions::default()
        },
        1e-3,
    );
}
