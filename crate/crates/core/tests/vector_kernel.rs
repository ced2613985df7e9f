mod common;

#[test]
fn vector_and_scalar_learning_kernels_agree() {
    common::vector_scalar_equivalence(10, 21).unwrap();
}
