use std::fmt;

use serde::{Deserialize, Serialize};

/// Supply-chain actor roles. Roles are bound per contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    Owner,
    Storage,
    SupplyShop,
    Producer,
    Distributor,
    Wholesaler,
    Retailer,
    Consumer,
}

impl Role {
    pub const ALL: [Role; 8] = [
        Role::Owner,
        Role::Storage,
        Role::SupplyShop,
        Role::Producer,
        Role::Distributor,
        Role::Wholesaler,
        Role::Retailer,
        Role::Consumer,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Owner => "Owner",
            Role::Storage => "Storage",
            Role::SupplyShop => "SupplyShop",
            Role::Producer => "Producer",
            Role::Distributor => "Distributor",
            Role::Wholesaler => "Wholesaler",
            Role::Retailer => "Retailer",
            Role::Consumer => "Consumer",
        }
    }

    pub fn parse(s: &str) -> Option<Role> {
        Role::ALL.into_iter().find(|r| r.as_str() == s)
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}
