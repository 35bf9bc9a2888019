//! Softmax ignores a constant added to every score, which is all the key
//! bias contributes.

use attnbias::linalg::Matrix;

fn main() -> attnbias::Result<()> {
    let a = Matrix::column(&[0.1, 0.2]).softmax_cols();
    let b = Matrix::column(&[5.1, 5.2]).softmax_cols();
    println!("softmax([0.1, 0.2]) = [{:.17}, {:.17}]", a.get(0, 0), a.get(1, 0));
    println!("softmax([5.1, 5.2]) = [{:.17}, {:.17}]", b.get(0, 0), b.get(1, 0));
    println!("max diff = {:.3e}", a.max_abs_diff(&b)?);

    let big = Matrix::column(&[1000.0, 1001.0, 999.0]).softmax_cols();
    println!("large scores stay finite: {:?}", big.data());
    Ok(())
}
