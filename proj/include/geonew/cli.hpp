#pragma once

namespace geonew::cli {

int run(int argc, char** argv);

}  // namespace geonew::cli
