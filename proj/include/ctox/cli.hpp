#pragma once

#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "ctox/backend.hpp"

namespace ctox::cli {

// Backend specs accepted by --classifier:
//   constant:<p>[:attr,attr]   every text scores p
//   stub:<file.json>           TableClassifier JSON
//   file:<scores.tsv>          digest/attribute/score TSV
//   oracle:<spec.json|default> testbed oracle
//   http://host:port           remote service speaking the wire protocol
std::shared_ptr<const ClassifierBackend> make_classifier(const std::string& spec);

// Backend specs accepted by --maskfill: stub:<file.json>, oracle:<spec.json|default>,
// http://host:port.
std::shared_ptr<const MaskFillBackend> make_mask_fill(const std::string& spec);

// Runs one subcommand. args excludes the program name. Returns the process
// exit code: 0 when every output was written, 1 on failure, 2 on bad usage.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace ctox::cli
