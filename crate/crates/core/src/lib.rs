pub mod cluster;
pub mod consensus;
pub mod crypto;
pub mod ehr;
pub mod ledger;
pub mod store;
