#include "clinrisk/tape.hpp"

#include "clinrisk/errors.hpp"

namespace clinrisk {

void Tape::backward(Tensor& loss) {
  if (!recording_)
    throw ContractError("backward() called on a non-recording tape");
  if (loss.size() != 1)
    throw ContractError("backward() requires a scalar loss, got shape " +
                        shape_str(loss.shape()));
  loss.grad()[0] = real{1};
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
}

}  // namespace clinrisk
