#include "ccrec/error.hpp"

namespace ccrec {

int exit_code_for(const std::string& category) {
  if (category == "config_error") return 2;
  if (category == "missing_prerequisite") return 3;
  if (category == "io_error") return 4;
  if (category == "data_error") return 5;
  if (category == "numeric_error") return 6;
  if (category == "contract_violation") return 7;
  if (category == "dimension_error") return 8;
  return 1;
}

}  // namespace ccrec
