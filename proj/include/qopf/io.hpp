#pragma once

// File helpers shared by the dataset, checkpoint and CLI layers.

#include <string>
#include <string_view>

namespace qopf {

/// SHA-1 of "blob <size>\0<content>", i.e. the id git assigns to a file.
std::string git_blob_sha1(std::string_view content);

std::string read_text_file(const std::string& path);

/// Writes to a temporary sibling and renames it into place.
void write_file_atomic(const std::string& path, std::string_view content);

/// Shortest decimal text that parses back to the same double.
std::string format_double(double x);

}  // namespace qopf
