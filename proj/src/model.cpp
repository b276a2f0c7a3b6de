#include "hopf/model.hpp"

#include "hopf/error.hpp"

namespace hopf {

void HybridModel::validate() const
{
    require(format_version == kModelFormatVersion, ErrorKind::InvalidArgument,
            "unsupported model format version " + std::to_string(format_version));
    normal_form.validate();
    map.validate();
    speed.validate();
    require(map.nn.input_size() == 3 && map.nn.output_size() == 2, ErrorKind::InvalidArgument,
            "map network must be 3 -> 2");
}

}  // namespace hopf
