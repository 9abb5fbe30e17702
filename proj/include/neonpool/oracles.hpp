#pragma once

#include "neonpool/txmodel.hpp"

namespace neonpool {

enum class UtxoStatus { Unspent, Spent, Missing };

// Confirmed-output view a node consults for input validity.
class UtxoOracle {
 public:
  virtual ~UtxoOracle() = default;
  [[nodiscard]] virtual UtxoStatus lookup(const BtcInput& input) const = 0;
};

// Account state view: nonce ordering and balance.
class StateOracle {
 public:
  virtual ~StateOracle() = default;
  [[nodiscard]] virtual bool admissible(const EthTransaction& tx) const = 0;
};

}  // namespace neonpool
