//! Tour of the third-order tensor algebra: mode-n products, the banded
//! M-transform and its inverse, the face-wise product, and the M-product
//! that composes them.
//!
//! Run with: cargo run -p tgcn --example tensor_algebra

use tgcn::tensor::{
    facewise_product, inverse_m_transform, m_product, m_transform, mode_n_product,
    BandedLowerMatrix, Matrix, Tensor3,
};

fn show(label: &str, x: &Tensor3) {
    let (i_dim, j_dim, t_dim) = x.dims();
    println!("{label} ({i_dim}x{j_dim}x{t_dim}):");
    for t in 0..t_dim {
        for i in 0..i_dim {
            let row: Vec<String> = (0..j_dim)
                .map(|j| format!("{:7.3}", x.get(i, j, t)))
                .collect();
            println!("  t={t} | {}", row.join(" "));
        }
    }
}

fn main() -> tgcn::Result<()> {
    // a 2x2x3 tensor whose frontal slices count upward
    let x = Tensor3::from_fn(2, 2, 3, |i, j, t| (t * 4 + i * 2 + j) as f64);
    show("x", &x);

    // mode-1 product rotates the row space of every slice
    let rot = Matrix::from_rows(&[vec![0.0, 1.0], vec![-1.0, 0.0]])?;
    show("x x1 rotation", &mode_n_product(&x, &rot, 1)?);

    // a banded lower-triangular mixing matrix with window 2: each slice
    // becomes a weighted average of itself and its predecessor
    let m = BandedLowerMatrix::from_rows(
        3,
        2,
        vec![vec![1.0], vec![0.5, 0.5], vec![0.25, 0.75]],
    )?;
    let mixed = m_transform(&x, &m)?;
    show("x x3 M (temporal mixing)", &mixed);

    // the inverse transform solves the banded system per tube and recovers x
    let recovered = inverse_m_transform(&mixed, &m)?;
    let worst = x
        .data()
        .iter()
        .zip(recovered.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0_f64, f64::max);
    println!("round-trip max error: {worst:.2e}");

    // face-wise product multiplies matching slices; the M-product does the
    // same in the transformed domain and maps back
    let y = Tensor3::from_fn(2, 2, 3, |i, j, _| if i == j { 1.0 } else { 0.5 });
    show("x fw y", &facewise_product(&x, &y)?);
    show("x * y (M-product)", &m_product(&x, &y, &m)?);
    Ok(())
}
