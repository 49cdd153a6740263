#include "zorn/model_loss.hpp"

// Header-only adapter; this TU anchors it into the library.
