mod common;

#[test]
fn configure_wait_read_program() {
    common::configure_wait_read().unwrap();
}
