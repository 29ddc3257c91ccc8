#pragma once

#include <cstddef>
#include <functional>

namespace seg {

// Worker-count knob shared by the parallel loops (datagen, prediction,
// grid search). 0 means "use hardware concurrency". Results are written to
// index-addressed slots, so outputs do not depend on the thread count.
void set_max_threads(int threads);
int max_threads();

void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

}  // namespace seg
