//! C ABI for greenpt. Placeholder during scaffolding.
