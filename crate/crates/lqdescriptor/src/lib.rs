pub mod config;
pub mod control;
pub mod error;
pub mod io;
pub mod linalg;
pub mod lure;
pub mod palindromic;
pub mod pencil;
pub mod popov;
pub mod system;
