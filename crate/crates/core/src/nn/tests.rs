use alloc::vec;
use alloc::vec::Vec;

use super::*;

const H: f64 = 1e-5;
const TOL: f64 = 1e-6;

fn rand(shape: &[usize], seed: u64) -> Tensor {
    Init::new(seed).uniform(shape, 1.0)
}

fn check<F: Fn(&mut Tape, &[Var]) -> Result<Var>>(inputs: &[Tensor], f: F) {
    let e = max_gradient_error(inputs, H, f).unwrap();
    assert!(e < TOL, "gradient error {e}");
}

#[test]
fn elementwise_gradients() {
    let a = rand(&[2, 3], 1);
    let b = rand(&[2, 3], 2);
    check(&[a.clone(), b.clone()], |t, v| t.add(v[0], v[1]));
    check(&[a.clone(), b.clone()], |t, v| t.sub(v[0], v[1]));
    check(&[a.clone(), b.clone()], |t, v| t.mul(v[0], v[1]));
    check(&[a.clone()], |t, v| Ok(t.sigmoid(v[0])));
    check(&[a.clone()], |t, v| Ok(t.tanh(v[0])));
    check(&[a.clone()], |t, v| Ok(t.softmax(v[0])));
    check(&[a.clone(), Tensor::scalar(0.3)], |t, v| t.prelu(v[0], v[1]));
    check(&[a.clone(), Tensor::scalar(1.7)], |t, v| t.scale_by(v[0], v[1]));
    check(&[a.clone(), b.clone()], |t, v| t.mse(v[0], v[1]));
    check(&[a, b], |t, v| t.concat(&[v[0], v[1]]));
}

#[test]
fn linear_and_bmm_gradients() {
    let x = rand(&[3, 4], 3);
    let w = rand(&[5, 4], 4);
    let b = rand(&[5], 5);
    check(&[x, w, b], |t, v| t.linear(v[0], v[1], Some(v[2])));
    for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
        let a = rand(if ta { &[2, 4, 3] } else { &[2, 3, 4] }, 6);
        let b = rand(if tb { &[2, 5, 4] } else { &[2, 4, 5] }, 7);
        check(&[a, b], move |t, v| t.bmm(v[0], v[1], ta, tb));
    }
}

#[test]
fn bmm_matches_naive_product() {
    let a = rand(&[1, 2, 3], 8);
    let b = rand(&[1, 3, 2], 9);
    let mut t = Tape::new(false, 0);
    let (va, vb) = (t.constant(a.clone()), t.constant(b.clone()));
    let c = t.bmm(va, vb, false, false).unwrap();
    for i in 0..2 {
        for j in 0..2 {
            let want: f64 = (0..3).map(|k| a.data[i * 3 + k] * b.data[k * 2 + j]).sum();
            assert!((t.value(c).data[i * 2 + j] - want).abs() < 1e-14);
        }
    }
}

#[test]
fn conv_gradients() {
    let x = rand(&[2, 2, 5, 6], 10);
    for (k, pad) in [(1, 0), (3, 1), (3, 0), (5, 2)] {
        let w = rand(&[3, 2, k, k], 11);
        let b = rand(&[3], 12);
        check(&[x.clone(), w, b], move |t, v| t.conv2d(v[0], v[1], Some(v[2]), pad));
    }
    let w = rand(&[2, 3, 3, 3], 13);
    check(&[x.clone(), w], |t, v| t.conv_transpose2d(v[0], v[1], None, 1));
    check(&[x], |t, v| t.reflect_pad(v[0], 2));
}

#[test]
fn conv_matches_direct_sum() {
    let x = rand(&[1, 2, 4, 5], 14);
    let w = rand(&[1, 2, 3, 3], 15);
    let mut t = Tape::new(false, 0);
    let (vx, vw) = (t.constant(x.clone()), t.constant(w.clone()));
    let y = t.conv2d(vx, vw, None, 1).unwrap();
    assert_eq!(t.shape(y), &[1, 1, 4, 5]);
    for oy in 0..4 {
        for ox in 0..5 {
            let mut s = 0.0;
            for c in 0..2 {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let (iy, ix) = (oy as isize + ky as isize - 1, ox as isize + kx as isize - 1);
                        if (0..4).contains(&iy) && (0..5).contains(&ix) {
                            s += x.data[(c * 4 + iy as usize) * 5 + ix as usize] * w.data[(c * 3 + ky) * 3 + kx];
                        }
                    }
                }
            }
            assert!((t.value(y).data[oy * 5 + ox] - s).abs() < 1e-13);
        }
    }
}

#[test]
fn transposed_conv_is_adjoint_of_conv() {
    // <conv(x, w), y> = <x, convT(y, w)> for stride 1 and matching padding
    let x = rand(&[1, 2, 5, 5], 16);
    let y = rand(&[1, 3, 5, 5], 17);
    let w = rand(&[3, 2, 3, 3], 18);
    let mut t = Tape::new(false, 0);
    let (vx, vy, vw) = (t.constant(x.clone()), t.constant(y.clone()), t.constant(w));
    let cx = t.conv2d(vx, vw, None, 1).unwrap();
    let ty = t.conv_transpose2d(vy, vw, None, 1).unwrap();
    let lhs: f64 = t.value(cx).data.iter().zip(&y.data).map(|(a, b)| a * b).sum();
    let rhs: f64 = t.value(ty).data.iter().zip(&x.data).map(|(a, b)| a * b).sum();
    assert!((lhs - rhs).abs() < 1e-12);
}

#[test]
fn reflection_padding_mirrors_without_repeating_the_edge() {
    let x = Tensor::new(&[1, 1, 3, 3], (0..9).map(f64::from).collect()).unwrap();
    let mut t = Tape::new(false, 0);
    let v = t.constant(x);
    let p = t.reflect_pad(v, 2).unwrap();
    let out = &t.value(p).data;
    assert_eq!(t.shape(p), &[1, 1, 7, 7]);
    // padded rows 0 and 4 both map to source row 2
    assert_eq!(&out[0..7], &out[28..35]);
    assert_eq!(out[2 * 7 + 2], 0.0);
    assert_eq!(out[2 * 7], 2.0);
}

#[test]
fn reduction_and_norm_gradients() {
    let x = rand(&[2, 3, 4, 5], 19);
    check(&[x.clone()], |t, v| t.channel_mean(v[0]));
    check(&[x.clone()], |t, v| t.channel_max(v[0]));
    let s = rand(&[2, 1, 4, 5], 20);
    check(&[x.clone(), s], |t, v| t.gate(v[0], v[1]));
    let (g, b) = (rand(&[3], 21), rand(&[3], 22));
    check(&[x.clone(), g, b], |t, v| t.layer_norm(v[0], v[1], v[2]));
    let (g, b) = (rand(&[6], 23), rand(&[6], 24));
    check(&[rand(&[2, 6], 25), g, b], |t, v| t.layer_norm(v[0], v[1], v[2]));
    check(&[x], |t, v| t.adaptive_avg_pool(v[0], 3, 2));
}

#[test]
fn sequence_op_gradients() {
    let x = rand(&[2, 3, 4], 26);
    check(&[x.clone()], |t, v| t.split_heads(v[0], 2));
    check(&[rand(&[4, 3, 2], 27)], |t, v| t.merge_heads(v[0], 2));
    check(&[x, rand(&[3], 28)], |t, v| t.add_positional(v[0], v[1]));
}

#[test]
fn heads_round_trip() {
    let x = rand(&[2, 5, 6], 29);
    let mut t = Tape::new(false, 0);
    let v = t.constant(x.clone());
    let s = t.split_heads(v, 3).unwrap();
    let m = t.merge_heads(s, 3).unwrap();
    assert_eq!(t.value(m), &x);
}

#[test]
fn layer_norm_output_is_standardized() {
    let x = rand(&[1, 2, 3, 3], 30);
    let mut t = Tape::new(false, 0);
    let v = t.constant(x);
    let (g, b) = (t.constant(Tensor::filled(&[2], 1.0)), t.constant(Tensor::zeros(&[2])));
    let y = t.layer_norm(v, g, b).unwrap();
    let d = &t.value(y).data;
    let mean: f64 = d.iter().sum::<f64>() / 18.0;
    let var: f64 = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 18.0;
    assert!(mean.abs() < 1e-12);
    assert!((var - 1.0).abs() < 1e-3);
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut t = Tape::new(false, 0);
    let v = t.constant(rand(&[4, 7], 31));
    let s = t.softmax(v);
    for row in t.value(s).data.chunks(7) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn dropout_is_identity_in_eval_and_unbiased_in_training() {
    let x = Tensor::filled(&[1, 20000], 1.0);
    let mut t = Tape::new(false, 0);
    let v = t.constant(x.clone());
    assert_eq!(t.dropout(v, 0.5), v);
    let mut t = Tape::new(true, 1);
    let v = t.constant(x);
    let d = t.dropout(v, 0.1);
    let mean: f64 = t.value(d).data.iter().sum::<f64>() / 20000.0;
    assert!((mean - 1.0).abs() < 0.03);
}

#[test]
fn constant_subgraphs_record_no_gradient() {
    let mut t = Tape::new(false, 0);
    let c = t.constant(rand(&[3], 32));
    let p = t.leaf(rand(&[3], 33));
    let y = t.mul(c, p).unwrap();
    let l = t.mean(y);
    t.backward(l).unwrap();
    assert!(t.grad(c).is_none());
    assert!(t.grad(p).is_some());
}

#[test]
fn cosine_schedule_endpoints_and_monotone() {
    assert_eq!(cosine_lr(0, 300, 1e-3, 1e-5), 1e-3);
    assert!((cosine_lr(300, 300, 1e-3, 1e-5) - 1e-5).abs() < 1e-18);
    let lrs: Vec<f64> = (0..=300).map(|t| cosine_lr(t, 300, 1e-3, 1e-5)).collect();
    assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn nadam_minimizes_a_quadratic() {
    let mut p = Params::new();
    let id = p.add("x", Tensor::new(&[2], vec![3.0, -2.0]).unwrap());
    let mut opt = NAdam::new(&p);
    for _ in 0..2000 {
        let x = p.get(id).data.clone();
        let g = vec![vec![2.0 * x[0], 8.0 * x[1]]];
        opt.step(&mut p, &g, 0.05).unwrap();
    }
    assert!(p.get(id).data.iter().all(|v| v.abs() < 1e-3), "{:?}", p.get(id).data);
}

#[test]
fn nadam_first_step_matches_hand_computation() {
    let mut p = Params::new();
    p.add("x", Tensor::scalar(1.0));
    let mut opt = NAdam::new(&p);
    opt.step(&mut p, &[vec![0.5]], 0.1).unwrap();
    let mu1 = 0.9 * (1.0 - 0.5 * 0.96f64.powf(0.004));
    let mu2 = 0.9 * (1.0 - 0.5 * 0.96f64.powf(0.008));
    let m = 0.1 * 0.5;
    let v = 0.001 * 0.25;
    let denom = (v / 0.001f64).sqrt() + 1e-8;
    let want = 1.0 - 0.1 * (1.0 - mu1) / (1.0 - mu1) * 0.5 / denom - 0.1 * mu2 / (1.0 - mu1 * mu2) * m / denom;
    assert!((p.iter().next().unwrap().value.data[0] - want).abs() < 1e-14);
}

#[test]
fn nadam_rejects_non_finite_gradients() {
    let mut p = Params::new();
    p.add("x", Tensor::scalar(1.0));
    let mut opt = NAdam::new(&p);
    assert!(matches!(opt.step(&mut p, &[vec![f64::NAN]], 0.1), Err(Error::Numerical(_))));
}

#[test]
fn checkpoint_round_trip_and_corruption() {
    let mut p = Params::new();
    p.add("a", rand(&[2, 3], 34));
    p.add("b", Tensor::scalar(-0.0));
    let mut w = Writer::header("demo", 42);
    w.params(&p);
    let bytes = w.finish();
    let mut q = p.clone();
    q.iter_mut().for_each(|e| e.value.data.iter_mut().for_each(|v| *v = 9.0));
    let mut r = Reader::new(&bytes);
    assert_eq!(r.header("demo").unwrap(), 42);
    r.params_into(&mut q).unwrap();
    r.finish().unwrap();
    assert_eq!(
        p.iter().flat_map(|e| e.value.data.iter().map(|v| v.to_bits())).collect::<Vec<_>>(),
        q.iter().flat_map(|e| e.value.data.iter().map(|v| v.to_bits())).collect::<Vec<_>>()
    );
    let mut short = Reader::new(&bytes[..bytes.len() - 3]);
    short.header("demo").unwrap();
    assert!(short.params_into(&mut q).is_err());
    assert!(Reader::new(&bytes).header("other").is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(Reader::new(&bad).header("demo").is_err());
}
