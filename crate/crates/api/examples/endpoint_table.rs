//! Prints the endpoint table shipped in `docs/endpoints.md`.

fn main() {
    print!("{}", comodeler_api::endpoint_table_markdown());
}
